//! Fixed-point quantization: symmetric Q-bit codes, per-channel asymmetric
//! int8, and the whole-graph quantization modes.
//!
//! The symmetric scheme maps reals in [-1, 1) onto signed Q-bit codes with
//! the upper clip bound realized as (2^(Q-1)-1)/2^(Q-1), the only choice that
//! fits the signed code range. Rounding is half away from zero everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    PerLayer,
    /// Per-channel along the given axis of the tensor shape.
    PerChannel(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bit_width: u8,
    pub scheme: Scheme,
    pub granularity: Granularity,
    pub scales: Vec<f64>,
    pub zero_points: Vec<i32>,
}

impl QuantParams {
    pub fn symmetric(bit_width: u8) -> Self {
        QuantParams {
            bit_width,
            scheme: Scheme::Symmetric,
            granularity: Granularity::PerLayer,
            scales: vec![pow2(-(bit_width as i32 - 1))],
            zero_points: vec![0],
        }
    }

    pub fn per_layer_asymmetric(scale: f64, zero_point: i32) -> Self {
        QuantParams {
            bit_width: 8,
            scheme: Scheme::Asymmetric,
            granularity: Granularity::PerLayer,
            scales: vec![scale],
            zero_points: vec![zero_point],
        }
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    /// Serialized byte footprint of the parameter arrays (f32 scale + i32
    /// zero point per channel), used by the size reports.
    pub fn param_bytes(&self) -> u64 {
        8 * self.scales.len() as u64
    }

    pub fn code_min(&self) -> i32 {
        -(1 << (self.bit_width - 1))
    }

    pub fn code_max(&self) -> i32 {
        (1 << (self.bit_width - 1)) - 1
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuantError {
    #[error("non-finite weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("code {code} out of range for Q={bits}")]
    CodeOutOfRange { code: i32, bits: u8 },
    #[error("operator {0} has no int8 realization")]
    UnsupportedOpForInt8(String),
    #[error("int8 quantization requires at least one calibration sample")]
    MissingCalibration,
    #[error("quantization axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
}

pub fn pow2(e: i32) -> f64 {
    (2.0f64).powi(e)
}

/// Round half away from zero, the convention used consistently by the
/// quantizer and the interpreter.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Symmetric Q-bit quantization of a single value: returns (code, value).
pub fn quantize_symmetric_one(w: f64, q: u8) -> (i32, f64) {
    let half_range = pow2(q as i32 - 1);
    let lo = -(half_range as i32);
    let hi = half_range as i32 - 1;
    let code = (round_half_away(w * half_range) as i32).clamp(lo, hi);
    (code, code as f64 / half_range)
}

/// Symmetric Q-bit quantization per the fixed-point mapping
/// `quant(w) = clip_[-1,1)(2^-(Q-1) * round(w * 2^(Q-1)))`.
/// Returns integer codes and the dequantized values.
pub fn quantize_symmetric(w: &[f64], q: u8) -> (Vec<i8>, Vec<f64>) {
    assert!((2..=8).contains(&q), "Q must be in [2, 8]");
    let mut codes = Vec::with_capacity(w.len());
    let mut values = Vec::with_capacity(w.len());
    for &x in w {
        let (c, v) = quantize_symmetric_one(x, q);
        codes.push(c as i8);
        values.push(v);
    }
    (codes, values)
}

/// Floor for degenerate (constant) channels; keeps scales positive.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-channel asymmetric int8 quantization along `axis` of `shape`.
/// scale_c = (max_c - min_c)/255, zero_point_c = round(-min_c/scale_c) - 128.
pub fn quantize_per_channel_asymmetric(
    weights: &[f64],
    shape: &[usize],
    axis: usize,
) -> Result<(Vec<i8>, QuantParams), QuantError> {
    if axis >= shape.len() {
        return Err(QuantError::BadAxis { axis, rank: shape.len() });
    }
    if let Some(i) = weights.iter().position(|x| !x.is_finite()) {
        return Err(QuantError::NonFiniteWeight(i));
    }
    let channels = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let channel_of = |flat: usize| (flat / inner) % channels;

    let mut min = vec![f64::INFINITY; channels];
    let mut max = vec![f64::NEG_INFINITY; channels];
    for (i, &w) in weights.iter().enumerate() {
        let c = channel_of(i);
        min[c] = min[c].min(w);
        max[c] = max[c].max(w);
    }
    let mut scales = Vec::with_capacity(channels);
    let mut zps = Vec::with_capacity(channels);
    for c in 0..channels {
        // ranges always include zero so a zero weight is exactly representable
        let lo = min[c].min(0.0);
        let hi = max[c].max(0.0);
        let scale = ((hi - lo) / 255.0).max(SCALE_FLOOR);
        let zp = (round_half_away(-lo / scale) as i32 - 128).clamp(-128, 127);
        scales.push(scale);
        zps.push(zp);
    }
    let mut codes = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let c = channel_of(i);
        let code = (round_half_away(w / scales[c]) as i64 + zps[c] as i64).clamp(-128, 127);
        codes.push(code as i8);
    }
    let params = QuantParams {
        bit_width: 8,
        scheme: Scheme::Asymmetric,
        granularity: Granularity::PerChannel(axis),
        scales,
        zero_points: zps,
    };
    Ok((codes, params))
}

/// Per-layer asymmetric params for an observed activation range.
pub fn asymmetric_params_for_range(lo: f64, hi: f64) -> QuantParams {
    let lo = lo.min(0.0);
    let hi = hi.max(0.0);
    let scale = ((hi - lo) / 255.0).max(SCALE_FLOOR);
    let zp = (round_half_away(-lo / scale) as i32 - 128).clamp(-128, 127);
    QuantParams::per_layer_asymmetric(scale, zp)
}

/// Quantize one real to a code under arbitrary params (per-layer or the given
/// channel index).
pub fn encode_value(v: f64, params: &QuantParams, channel: usize) -> i8 {
    let c = channel.min(params.scales.len() - 1);
    match params.scheme {
        Scheme::Symmetric => quantize_symmetric_one(v, params.bit_width).0 as i8,
        Scheme::Asymmetric => {
            let code = round_half_away(v / params.scales[c]) as i64 + params.zero_points[c] as i64;
            code.clamp(params.code_min() as i64, params.code_max() as i64) as i8
        }
    }
}

pub fn decode_value(code: i8, params: &QuantParams, channel: usize) -> f64 {
    let c = channel.min(params.scales.len() - 1);
    match params.scheme {
        Scheme::Symmetric => code as f64 * pow2(-(params.bit_width as i32 - 1)),
        Scheme::Asymmetric => (code as f64 - params.zero_points[c] as f64) * params.scales[c],
    }
}

/// Inverse mapping for a full code array.
pub fn dequantize(codes: &[i8], params: &QuantParams, shape: &[usize]) -> Result<Vec<f64>, QuantError> {
    for &c in codes {
        if (c as i32) < params.code_min() || (c as i32) > params.code_max() {
            return Err(QuantError::CodeOutOfRange { code: c as i32, bits: params.bit_width });
        }
    }
    let out = match params.granularity {
        Granularity::PerLayer => codes.iter().map(|&c| decode_value(c, params, 0)).collect(),
        Granularity::PerChannel(axis) => {
            let channels = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            codes
                .iter()
                .enumerate()
                .map(|(i, &c)| decode_value(c, params, (i / inner) % channels))
                .collect()
        }
    };
    Ok(out)
}
