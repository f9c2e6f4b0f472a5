//! Model definitions, the float reference path used for training and attack
//! gradients, and the integer path where every multiply goes through a
//! product LUT.

mod assign;
mod eval;
mod float;
mod model;
mod quantized;
mod train;

pub use assign::{ApproxScope, LutBank, MultAssignment, ResolvedLuts};
pub use eval::{accuracy, predictions, Classifier};
pub use float::{softmax_cross_entropy, Gradients, Trace};
pub use model::{Conv2d, Dense, Layer, LayerKind, ModelSpec, Shape};
pub use quantized::{forward_quant, ApproxModel, QuantizedModel};
pub use train::{train, train_with, Optimizer, TrainConfig, TrainEvent, TrainLog};

/// Per-class scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub scores: Vec<f64>,
}

impl Logits {
    pub fn new(scores: Vec<f64>) -> Self {
        Logits { scores }
    }

    /// Index of the highest score; ties go to the lowest index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}
