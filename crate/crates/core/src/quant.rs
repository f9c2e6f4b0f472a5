//! Symmetric per-tensor 8-bit quantization.
//!
//! Real values map to `data · scale` with `data ∈ [−127, 127]` and no zero
//! point. Biases live in 32-bit integers at `scale_w · scale_x` so they add
//! straight into the MAC accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnengine::{Layer, ModelSpec};

pub const QMAX: i32 = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub scale: f64,
}

/// `clamp(round(v / scale), −127, 127)` with rounding half away from zero.
pub fn quantize(values: &[f64], shape: &[usize], scale: f64) -> Result<QuantTensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("quantization scale {scale} must be > 0")));
    }
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(Error::ShapeMismatch {
            expected: shape.to_vec(),
            actual: vec![values.len()],
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantize input"));
    }
    let data = values.iter().map(|&v| quantize_value(v, scale)).collect();
    Ok(QuantTensor {
        shape: shape.to_vec(),
        data,
        scale,
    })
}

#[inline]
pub fn quantize_value(v: f64, scale: f64) -> i8 {
    (v / scale).round().clamp(-(QMAX as f64), QMAX as f64) as i8
}

pub fn dequantize(q: &QuantTensor) -> Vec<f64> {
    q.data.iter().map(|&d| d as f64 * q.scale).collect()
}

/// Scale mapping the largest magnitude to 127; all-zero tensors get 1.
pub fn scale_for_max_abs(max_abs: f64) -> f64 {
    if max_abs > 0.0 && max_abs.is_finite() {
        max_abs / QMAX as f64
    } else {
        1.0
    }
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Scales needed to run a model in the integer domain.
///
/// `activation_scales[i]` is the scale of the integer tensor produced by
/// layer `i`. Conv/Dense layers immediately followed by ReLU are calibrated on
/// the rectified output, since negative values are discarded anyway. ReLU,
/// pooling and flatten do not rescale and inherit their input's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub input_scale: f64,
    pub activation_scales: Vec<f64>,
    /// Per-layer weight scale; `None` for layers without weights.
    pub weight_scales: Vec<Option<f64>>,
}

impl QuantParams {
    pub fn validate_for(&self, model: &ModelSpec) -> Result<()> {
        let n = model.layers.len();
        if self.activation_scales.len() != n || self.weight_scales.len() != n {
            return Err(Error::Container(format!(
                "quantization parameters cover {} layers, model has {n}",
                self.activation_scales.len()
            )));
        }
        for (i, layer) in model.layers.iter().enumerate() {
            if layer.is_multiplying() != self.weight_scales[i].is_some() {
                return Err(Error::Container(format!("weight scale presence mismatch at layer {i}")));
            }
        }
        let all = std::iter::once(self.input_scale)
            .chain(self.activation_scales.iter().copied())
            .chain(self.weight_scales.iter().flatten().copied());
        for s in all {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Container(format!("invalid scale {s}")));
            }
        }
        Ok(())
    }

    /// Scale of the integer tensor feeding layer `i`.
    pub fn input_scale_of(&self, i: usize) -> f64 {
        if i == 0 {
            self.input_scale
        } else {
            self.activation_scales[i - 1]
        }
    }

    /// Scale of layer `i`'s 32-bit integer bias.
    pub fn bias_scale(&self, i: usize) -> Option<f64> {
        self.weight_scales[i].map(|sw| sw * self.input_scale_of(i))
    }
}

/// Max-abs calibration over a set of float images, processed in order.
pub fn calibrate<'a, I>(model: &ModelSpec, images: I) -> Result<QuantParams>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let n = model.layers.len();
    let mut input_max = 0.0f64;
    let mut layer_max = vec![0.0f64; n];
    let mut seen = 0usize;
    for x in images {
        let trace = model.forward_trace(x)?;
        input_max = input_max.max(max_abs(x));
        for (i, out) in trace.outputs().enumerate() {
            layer_max[i] = layer_max[i].max(max_abs(out));
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptySubset);
    }

    let input_scale = scale_for_max_abs(input_max);
    let mut activation_scales = Vec::with_capacity(n);
    let mut weight_scales = Vec::with_capacity(n);
    for (i, layer) in model.layers.iter().enumerate() {
        let scale = match layer {
            Layer::Conv2d(_) | Layer::Dense(_) => {
                let fused_relu = matches!(model.layers.get(i + 1), Some(Layer::Relu));
                let observed = if fused_relu { layer_max[i + 1] } else { layer_max[i] };
                scale_for_max_abs(observed)
            }
            _ => activation_scales.last().copied().unwrap_or(input_scale),
        };
        activation_scales.push(scale);
        weight_scales.push(layer.weights().map(|w| scale_for_max_abs(max_abs(w))));
    }
    Ok(QuantParams {
        input_scale,
        activation_scales,
        weight_scales,
    })
}

/// Fixed-point rescale of a 32-bit accumulator by a positive real ratio,
/// `round_half_away(acc · multiplier / 2^shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantizer {
    multiplier: i64,
    shift: u32,
}

impl Requantizer {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::InvalidArgument(format!("requantization ratio {ratio}")));
        }
        // normalise the multiplier into [2^30, 2^31)
        let exp = ratio.log2().floor() as i32;
        let shift = 30 - exp;
        if !(1..=62).contains(&shift) {
            return Err(Error::InvalidArgument(format!(
                "requantization ratio {ratio} out of range"
            )));
        }
        let mut multiplier = (ratio * (shift as f64).exp2()).round() as i64;
        let mut shift = shift as u32;
        if multiplier >= 1 << 31 {
            multiplier >>= 1;
            shift -= 1;
        }
        Ok(Requantizer { multiplier, shift })
    }

    #[inline]
    pub fn apply(&self, acc: i32) -> i64 {
        let prod = acc as i64 * self.multiplier;
        let half = 1i64 << (self.shift - 1);
        let mag = (prod.abs() + half) >> self.shift;
        if prod < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Rescale and saturate to the int8 range.
    #[inline]
    pub fn to_i8(&self, acc: i32) -> i8 {
        self.apply(acc).clamp(-(QMAX as i64), QMAX as i64) as i8
    }
}
