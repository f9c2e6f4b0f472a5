//! Double-precision reference path: inference, backprop and the loss.

use super::model::{Conv2d, Dense, Layer, ModelSpec, Shape};
use super::Logits;
use crate::error::{Error, Result};

/// Per-layer activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    /// Input shape of every layer, plus the final output shape.
    shapes: Vec<Shape>,
    /// Winning input index per pooled output, for MaxPool layers.
    pool_argmax: Vec<Option<Vec<u32>>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has an input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    /// Output of every layer in order.
    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.acts[1..].iter().map(Vec::as_slice)
    }

    /// Piecewise-linear region signature: which ReLUs are active and which
    /// pooling inputs win. Two inputs with equal signatures lie in the same
    /// linear piece of the network.
    pub fn activation_pattern(&self, model: &ModelSpec) -> Vec<u32> {
        let mut sig = Vec::new();
        for (i, layer) in model.layers.iter().enumerate() {
            match layer {
                Layer::Relu => sig.extend(self.acts[i].iter().map(|&v| (v > 0.0) as u32)),
                Layer::MaxPool2x2 => {
                    sig.extend_from_slice(self.pool_argmax[i].as_ref().expect("pool trace"))
                }
                _ => {}
            }
        }
        sig
    }
}

/// Parameter gradients, aligned with `ModelSpec::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelSpec) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| match (l.weights(), l.bias()) {
                    (Some(w), Some(b)) => Some((vec![0.0; w.len()], vec![0.0; b.len()])),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((w, b)), Some((ow, ob))) = (mine, theirs) {
                w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
                b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.iter_mut().for_each(|v| *v *= k);
            b.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Output-position range `[lo, hi)` whose input index `o·stride + k − pad`
/// lands inside `[0, extent)`.
#[inline]
fn valid_range(extent: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k {
        (extent + pad - k).div_ceil(stride).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_forward(conv: &Conv2d, input: &[f64], ins: Shape, outs: Shape) -> Vec<f64> {
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
    let plane = outs.h * outs.w;
    let mut out = vec![0.0; outs.len()];
    for oc in 0..conv.out_ch {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.iter_mut().for_each(|v| *v = conv.bias[oc]);
        for ic in 0..conv.in_ch {
            let src = &input[ic * ins.h * ins.w..(ic + 1) * ins.h * ins.w];
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(ins.h, outs.h, kh, s, p);
                for kw in 0..k {
                    let w = conv.weight[((oc * conv.in_ch + ic) * k + kh) * k + kw];
                    let (ox_lo, ox_hi) = valid_range(ins.w, outs.w, kw, s, p);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + kh - p;
                        let row = &src[iy * ins.w..(iy + 1) * ins.w];
                        let drow = &mut dst[oy * outs.w..(oy + 1) * outs.w];
                        for ox in ox_lo..ox_hi {
                            drow[ox] += w * row[ox * s + kw - p];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    conv: &Conv2d,
    input: &[f64],
    ins: Shape,
    outs: Shape,
    dout: &[f64],
    grads: Option<&mut (Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
    let plane = outs.h * outs.w;
    let mut din = vec![0.0; ins.len()];
    let mut grads = grads;
    for oc in 0..conv.out_ch {
        let g = &dout[oc * plane..(oc + 1) * plane];
        if let Some((_, gb)) = grads.as_deref_mut() {
            gb[oc] += g.iter().sum::<f64>();
        }
        for ic in 0..conv.in_ch {
            let base = ic * ins.h * ins.w;
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(ins.h, outs.h, kh, s, p);
                for kw in 0..k {
                    let widx = ((oc * conv.in_ch + ic) * k + kh) * k + kw;
                    let w = conv.weight[widx];
                    let (ox_lo, ox_hi) = valid_range(ins.w, outs.w, kw, s, p);
                    let mut gw = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + kh - p;
                        let grow = &g[oy * outs.w..(oy + 1) * outs.w];
                        let irow = base + iy * ins.w;
                        for ox in ox_lo..ox_hi {
                            let ix = irow + ox * s + kw - p;
                            gw += grow[ox] * input[ix];
                            din[ix] += w * grow[ox];
                        }
                    }
                    if let Some((gwv, _)) = grads.as_deref_mut() {
                        gwv[widx] += gw;
                    }
                }
            }
        }
    }
    din
}

fn dense_forward(d: &Dense, input: &[f64]) -> Vec<f64> {
    d.weight
        .chunks_exact(d.inputs)
        .zip(&d.bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

fn dense_backward(
    d: &Dense,
    input: &[f64],
    dout: &[f64],
    grads: Option<&mut (Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let mut din = vec![0.0; d.inputs];
    for (row, &g) in d.weight.chunks_exact(d.inputs).zip(dout) {
        if g != 0.0 {
            din.iter_mut().zip(row).for_each(|(v, w)| *v += w * g);
        }
    }
    if let Some((gw, gb)) = grads {
        for (o, &g) in dout.iter().enumerate() {
            gb[o] += g;
            if g != 0.0 {
                let grow = &mut gw[o * d.inputs..(o + 1) * d.inputs];
                grow.iter_mut().zip(input).for_each(|(v, x)| *v += g * x);
            }
        }
    }
    din
}

/// 2×2 stride-2 max pooling; ties go to the first input in scan order.
fn pool_forward(input: &[f64], ins: Shape, outs: Shape) -> (Vec<f64>, Vec<u32>) {
    let mut out = Vec::with_capacity(outs.len());
    let mut arg = Vec::with_capacity(outs.len());
    for c in 0..outs.c {
        let base = c * ins.h * ins.w;
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let mut best_idx = base + 2 * oy * ins.w + 2 * ox;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * ins.w + 2 * ox + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}

impl ModelSpec {
    /// Runs the float model and keeps every intermediate activation.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        shapes.push(self.input);
        for layer in &self.layers {
            let ins = *shapes.last().unwrap();
            let outs = layer.output_shape(ins)?;
            let input = acts.last().unwrap();
            let mut arg = None;
            let out = match layer {
                Layer::Conv2d(c) => conv_forward(c, input, ins, outs),
                Layer::Dense(d) => dense_forward(d, input),
                Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                Layer::MaxPool2x2 => {
                    let (o, a) = pool_forward(input, ins, outs);
                    arg = Some(a);
                    o
                }
                Layer::Flatten => input.clone(),
            };
            acts.push(out);
            shapes.push(outs);
            pool_argmax.push(arg);
        }
        Ok(Trace {
            acts,
            shapes,
            pool_argmax,
        })
    }

    pub fn forward_float(&self, x: &[f64]) -> Result<Logits> {
        Ok(Logits::new(self.forward_trace(x)?.logits().to_vec()))
    }

    /// Backpropagates `dlogits` through a recorded trace. Returns the input
    /// gradient and accumulates parameter gradients when `grads` is given.
    pub fn backward(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        if dlogits.len() != trace.logits().len() {
            return Err(Error::ShapeMismatch {
                expected: vec![trace.logits().len()],
                actual: vec![dlogits.len()],
            });
        }
        let mut delta = dlogits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let (ins, outs) = (trace.shapes[i], trace.shapes[i + 1]);
            let slot = grads
                .as_deref_mut()
                .and_then(|g| g.layers[i].as_mut());
            delta = match layer {
                Layer::Conv2d(c) => conv_backward(c, input, ins, outs, &delta, slot),
                Layer::Dense(d) => dense_backward(d, input, &delta, slot),
                Layer::Relu => input
                    .iter()
                    .zip(&delta)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
                Layer::MaxPool2x2 => {
                    let mut din = vec![0.0; ins.len()];
                    let arg = trace.pool_argmax[i].as_ref().expect("pool trace");
                    for (&src, &g) in arg.iter().zip(&delta) {
                        din[src as usize] += g;
                    }
                    din
                }
                Layer::Flatten => delta,
            };
        }
        Ok(delta)
    }

    /// Cross-entropy loss of `x` against `label` and its gradient with
    /// respect to the input pixels.
    pub fn loss_and_input_gradient(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let (loss, dlogits) = softmax_cross_entropy(trace.logits(), label)?;
        Ok((loss, self.backward(&trace, &dlogits, None)?))
    }

    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        Ok(self.loss_and_input_gradient(x, label)?.1)
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let trace = self.forward_trace(x)?;
        Ok(softmax_cross_entropy(trace.logits(), label)?.0)
    }
}

/// Loss `logsumexp(z) − z[label]` and its gradient `softmax(z) − onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = if logits[label] == max {
        let rest: f64 = exps.iter().enumerate().filter(|&(k, _)| k != label).map(|(_, e)| e).sum();
        (rest / exps[label]).ln_1p()
    } else {
        sum.ln() + max - logits[label]
    };
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
