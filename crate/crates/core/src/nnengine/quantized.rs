//! Integer inference. Activations are int8, weights int8, biases int32 and
//! every product is a LUT lookup on operand magnitudes:
//!
//! ```text
//! acc = bias + Σ sign(a)·sign(w)·lut[|a|][|w|]
//! ```
//!
//! Accumulators are requantized to the next layer's scale with a fixed-point
//! multiplier. The last layer's accumulator is dequantized into logits.

use std::sync::Arc;

use super::assign::{LutBank, MultAssignment, ResolvedLuts};
use super::eval::Classifier;
use super::model::{Layer, ModelSpec, Shape};
use super::Logits;
use crate::axmult::{ProductLut, MAX_PRODUCT};
use crate::error::{Error, Result};
use crate::quant::{quantize_value, QuantParams, Requantizer};

#[derive(Debug, Clone)]
struct QuantMac {
    weight: Vec<i8>,
    bias: Vec<i32>,
    /// Real value of one accumulator unit, `scale_w · scale_x`.
    acc_scale: f64,
    requant: Requantizer,
}

#[derive(Debug, Clone)]
enum QLayer {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        mac: QuantMac,
    },
    Dense {
        inputs: usize,
        mac: QuantMac,
    },
    Relu,
    MaxPool2x2,
    Flatten,
}

/// A model with weights and biases converted to integers, ready to run
/// against any per-layer LUT assignment.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    input: Shape,
    input_scale: f64,
    activation_scales: Vec<f64>,
    shapes: Vec<Shape>,
    layers: Vec<QLayer>,
}

fn quantize_mac(
    index: usize,
    weights: &[f64],
    bias: &[f64],
    fan_in: usize,
    qp: &QuantParams,
) -> Result<QuantMac> {
    let sw = qp.weight_scales[index].expect("multiplying layer has a weight scale");
    let sx = qp.input_scale_of(index);
    let acc_scale = sw * sx;
    let weight = weights.iter().map(|&w| quantize_value(w, sw)).collect();
    let bias = bias
        .iter()
        .map(|&b| {
            let q = (b / acc_scale).round();
            if q.abs() >= i32::MAX as f64 {
                Err(Error::AccumulatorBound {
                    layer: index,
                    worst: q as i64,
                })
            } else {
                Ok(q as i32)
            }
        })
        .collect::<Result<Vec<i32>>>()?;
    let max_bias = bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
    let worst = MAX_PRODUCT as i64 * fan_in as i64 + max_bias;
    if worst >= i32::MAX as i64 {
        return Err(Error::AccumulatorBound { layer: index, worst });
    }
    let requant = Requantizer::new(acc_scale / qp.activation_scales[index])?;
    Ok(QuantMac {
        weight,
        bias,
        acc_scale,
        requant,
    })
}

impl QuantizedModel {
    /// Quantizes weights and biases and checks the accumulator bound of
    /// every layer.
    pub fn prepare(model: &ModelSpec, qp: &QuantParams) -> Result<Self> {
        qp.validate_for(model)?;
        let shapes = model.shapes()?;
        let layers = model
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                Ok(match layer {
                    Layer::Conv2d(c) => QLayer::Conv {
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        kernel: c.kernel,
                        stride: c.stride,
                        padding: c.padding,
                        mac: quantize_mac(i, &c.weight, &c.bias, c.fan_in(), qp)?,
                    },
                    Layer::Dense(d) => QLayer::Dense {
                        inputs: d.inputs,
                        mac: quantize_mac(i, &d.weight, &d.bias, d.inputs, qp)?,
                    },
                    Layer::Relu => QLayer::Relu,
                    Layer::MaxPool2x2 => QLayer::MaxPool2x2,
                    Layer::Flatten => QLayer::Flatten,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedModel {
            input: model.input,
            input_scale: qp.input_scale,
            activation_scales: qp.activation_scales.clone(),
            shapes,
            layers,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Quantized weights of layer `i`, if it multiplies.
    pub fn int_weights(&self, i: usize) -> Option<&[i8]> {
        match &self.layers[i] {
            QLayer::Conv { mac, .. } | QLayer::Dense { mac, .. } => Some(&mac.weight),
            _ => None,
        }
    }

    pub fn int_bias(&self, i: usize) -> Option<&[i32]> {
        match &self.layers[i] {
            QLayer::Conv { mac, .. } | QLayer::Dense { mac, .. } => Some(&mac.bias),
            _ => None,
        }
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    /// Integer forward pass. `luts[i]` must be set for every Conv/Dense layer.
    pub fn forward(&self, x: &[f64], luts: &ResolvedLuts) -> Result<Logits> {
        if x.len() != self.input.len() {
            return Err(Error::ShapeMismatch {
                expected: self.input.dims(),
                actual: vec![x.len()],
            });
        }
        if luts.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} LUT slots for {} layers",
                luts.len(),
                self.layers.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward_quant input"));
        }
        let mut act: Vec<i8> = x.iter().map(|&v| quantize_value(v, self.input_scale)).collect();
        let mut shape = self.input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let outs = self.shapes[i];
            let lut = || {
                luts[i]
                    .as_deref()
                    .ok_or_else(|| Error::MissingLut(format!("layer {i}")))
            };
            act = match layer {
                QLayer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    mac,
                } => {
                    let acc = conv_acc(&act, shape, outs, *in_ch, *out_ch, *kernel, *stride, *padding, mac, lut()?);
                    if i == last {
                        return Ok(dequantize_acc(&acc, mac.acc_scale));
                    }
                    acc.iter().map(|&a| mac.requant.to_i8(a)).collect()
                }
                QLayer::Dense { inputs, mac } => {
                    let acc = dense_acc(&act, *inputs, mac, lut()?);
                    if i == last {
                        return Ok(dequantize_acc(&acc, mac.acc_scale));
                    }
                    acc.iter().map(|&a| mac.requant.to_i8(a)).collect()
                }
                QLayer::Relu => act.iter().map(|&v| v.max(0)).collect(),
                QLayer::MaxPool2x2 => pool_i8(&act, shape, outs),
                QLayer::Flatten => act,
            };
            shape = outs;
        }
        // the model ends in a non-multiplying layer
        let scale = self.activation_scales[last];
        Ok(Logits::new(act.iter().map(|&v| v as f64 * scale).collect()))
    }
}

fn dequantize_acc(acc: &[i32], scale: f64) -> Logits {
    Logits::new(acc.iter().map(|&a| a as f64 * scale).collect())
}

#[inline]
fn lut_mul(row: &[i32], w_neg: bool, a: i8) -> i32 {
    let p = row[a.unsigned_abs() as usize];
    if (a < 0) != w_neg {
        -p
    } else {
        p
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_acc(
    input: &[i8],
    ins: Shape,
    outs: Shape,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    s: usize,
    p: usize,
    mac: &QuantMac,
    lut: &ProductLut,
) -> Vec<i32> {
    let plane = outs.h * outs.w;
    let mut acc = vec![0i32; outs.len()];
    for oc in 0..out_ch {
        let dst = &mut acc[oc * plane..(oc + 1) * plane];
        dst.iter_mut().for_each(|v| *v = mac.bias[oc]);
        for ic in 0..in_ch {
            let src = &input[ic * ins.h * ins.w..(ic + 1) * ins.h * ins.w];
            for kh in 0..k {
                for kw in 0..k {
                    let w = mac.weight[((oc * in_ch + ic) * k + kh) * k + kw];
                    if w == 0 {
                        continue;
                    }
                    let row = lut.row(w.unsigned_abs());
                    let w_neg = w < 0;
                    for oy in 0..outs.h {
                        let iy = (oy * s + kh) as isize - p as isize;
                        if iy < 0 || iy >= ins.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * ins.w..(iy as usize + 1) * ins.w];
                        let drow = &mut dst[oy * outs.w..(oy + 1) * outs.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kw) as isize - p as isize;
                            if ix < 0 || ix >= ins.w as isize {
                                continue;
                            }
                            let a = srow[ix as usize];
                            if a != 0 {
                                *d += lut_mul(row, w_neg, a);
                            }
                        }
                    }
                }
            }
        }
    }
    acc
}

fn dense_acc(input: &[i8], inputs: usize, mac: &QuantMac, lut: &ProductLut) -> Vec<i32> {
    mac.weight
        .chunks_exact(inputs)
        .zip(&mac.bias)
        .map(|(row_w, &b)| {
            let mut acc = b;
            for (&w, &a) in row_w.iter().zip(input) {
                if w != 0 && a != 0 {
                    acc += lut_mul(lut.row(w.unsigned_abs()), w < 0, a);
                }
            }
            acc
        })
        .collect()
}

fn pool_i8(input: &[i8], ins: Shape, outs: Shape) -> Vec<i8> {
    let mut out = Vec::with_capacity(outs.len());
    for c in 0..outs.c {
        let base = c * ins.h * ins.w;
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let at = |dy: usize, dx: usize| input[base + (2 * oy + dy) * ins.w + 2 * ox + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

/// A quantized model bound to one multiplier assignment.
#[derive(Debug, Clone)]
pub struct ApproxModel {
    model: Arc<QuantizedModel>,
    luts: ResolvedLuts,
}

impl ApproxModel {
    pub fn new(model: Arc<QuantizedModel>, luts: ResolvedLuts) -> Self {
        ApproxModel { model, luts }
    }

    /// Quantizes `model`, builds missing LUTs into `bank`, and binds them.
    pub fn build(
        model: &ModelSpec,
        qp: &QuantParams,
        assignment: &MultAssignment,
        bank: &mut LutBank,
    ) -> Result<Self> {
        let qmodel = Arc::new(QuantizedModel::prepare(model, qp)?);
        bank.ensure_all(assignment)?;
        let luts = bank.resolve(model, assignment)?;
        Ok(ApproxModel::new(qmodel, luts))
    }

    pub fn quantized(&self) -> &QuantizedModel {
        &self.model
    }
}

impl Classifier for ApproxModel {
    fn classify(&self, x: &[f64]) -> Result<Logits> {
        self.model.forward(x, &self.luts)
    }
}

/// One-shot integer inference of a single image. For repeated use build an
/// [`ApproxModel`] once instead.
pub fn forward_quant(
    model: &ModelSpec,
    qp: &QuantParams,
    x: &[f64],
    assignment: &MultAssignment,
    bank: &LutBank,
) -> Result<Logits> {
    let qmodel = QuantizedModel::prepare(model, qp)?;
    let luts = bank.resolve(model, assignment)?;
    qmodel.forward(x, &luts)
}
