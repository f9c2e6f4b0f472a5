use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major activation shape. Dense layers see `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.c, self.h, self.w]
    }
}

/// 2-D convolution. Weights are `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_ch {
            return Err(Error::Topology(format!(
                "conv expects {} input channels, got {}",
                self.in_ch, input.c
            )));
        }
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if padded < self.kernel || self.stride == 0 {
                return Err(Error::Topology(format!(
                    "conv kernel {} does not fit input extent {n}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok(Shape::new(self.out_ch, span(input.h)?, span(input.w)?))
    }
}

/// Fully connected layer. Weights are `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool2x2,
    Flatten,
}

/// Weight-free description of a layer, used for serialization and hashing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    MaxPool2x2,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(c) => LayerKind::Conv2d {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Dense(d) => LayerKind::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2x2 => LayerKind::MaxPool2x2,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn from_kind(kind: &LayerKind) -> Layer {
        match *kind {
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::zeros(in_ch, out_ch, kernel, stride, padding)),
            LayerKind::Dense { inputs, outputs } => Layer::Dense(Dense::zeros(inputs, outputs)),
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool2x2 => Layer::MaxPool2x2,
            LayerKind::Flatten => Layer::Flatten,
        }
    }

    /// Conv and Dense layers perform multiplications; nothing else does.
    pub fn is_multiplying(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv2d(_))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Layer::Conv2d(c) => Some(&c.weight),
            Layer::Dense(d) => Some(&d.weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            Layer::Conv2d(c) => Some(&c.bias),
            Layer::Dense(d) => Some(&d.bias),
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }

    /// Multiplications feeding one output element.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.fan_in()),
            Layer::Dense(d) => Some(d.inputs),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Dense(d) => {
                if input.h != 1 || input.w != 1 || input.c != d.inputs {
                    return Err(Error::Topology(format!(
                        "dense expects ({}, 1, 1), got {:?}",
                        d.inputs, input
                    )));
                }
                Ok(Shape::new(d.outputs, 1, 1))
            }
            Layer::Relu => Ok(input),
            Layer::MaxPool2x2 => {
                if input.h < 2 || input.w < 2 {
                    return Err(Error::Topology(format!("cannot pool {input:?}")));
                }
                Ok(Shape::new(input.c, input.h / 2, input.w / 2))
            }
            Layer::Flatten => Ok(Shape::new(input.len(), 1, 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    /// Builds a model and checks that adjacent layer shapes compose.
    pub fn new(name: impl Into<String>, input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let model = ModelSpec {
            name: name.into(),
            input,
            layers,
        };
        model.shapes()?;
        for layer in &model.layers {
            let (Some(w), Some(b)) = (layer.weights(), layer.bias()) else {
                continue;
            };
            let expected = match layer {
                Layer::Conv2d(c) => (c.out_ch * c.fan_in(), c.out_ch),
                Layer::Dense(d) => (d.outputs * d.inputs, d.outputs),
                _ => unreachable!(),
            };
            if (w.len(), b.len()) != expected {
                return Err(Error::Topology(format!(
                    "parameter sizes ({}, {}) do not match layer {:?}",
                    w.len(),
                    b.len(),
                    layer.kind()
                )));
            }
        }
        Ok(model)
    }

    /// Zero-initialized model from a bare topology.
    pub fn from_kinds(name: impl Into<String>, input: Shape, kinds: &[LayerKind]) -> Result<Self> {
        ModelSpec::new(name, input, kinds.iter().map(Layer::from_kind).collect())
    }

    /// LeNet-5 for 28×28 MNIST: two 5×5 conv stages and three dense layers,
    /// 44,426 parameters.
    pub fn lenet5() -> Self {
        let layers = vec![
            Layer::Conv2d(Conv2d::zeros(1, 6, 5, 1, 0)),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Conv2d(Conv2d::zeros(6, 16, 5, 1, 0)),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Dense(Dense::zeros(256, 120)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(120, 84)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(84, 10)),
        ];
        ModelSpec::new("lenet5", Shape::new(1, 28, 28), layers).expect("static topology")
    }

    /// Small CIFAR-style CNN (3×32×32 input) for conv-only approximation demos.
    pub fn tiny_cifar() -> Self {
        let layers = vec![
            Layer::Conv2d(Conv2d::zeros(3, 16, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Conv2d(Conv2d::zeros(16, 32, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Conv2d(Conv2d::zeros(32, 32, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Dense(Dense::zeros(512, 64)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(64, 10)),
        ];
        ModelSpec::new("tiny_cifar", Shape::new(3, 32, 32), layers).expect("static topology")
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_len(&self) -> usize {
        self.shapes()
            .ok()
            .and_then(|s| s.last().copied())
            .map(|s| s.len())
            .unwrap_or(0)
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().map_or(0, <[f64]>::len) + l.bias().map_or(0, <[f64]>::len))
            .sum()
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    pub fn dense_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Dense(_))).count()
    }

    /// He-uniform weights and zero biases from a seeded generator.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let Some(fan_in) = layer.fan_in() else {
                continue;
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, b) = layer.params_mut().expect("multiplying layer");
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input.len() {
            return Err(Error::ShapeMismatch {
                expected: self.input.dims(),
                actual: vec![x.len()],
            });
        }
        Ok(())
    }
}
