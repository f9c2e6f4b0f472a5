//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: a relative-error heatmap of a multiplier's product
//! table, the step-by-step result of one approximate product, and an attack
//! explorer that perturbs a drawn digit and classifies it with every
//! multiplier.

use std::sync::Arc;

use axrobust::attacks::{distances, AttackConfig, AttackMethod, DistanceTriple, Norm};
use axrobust::axmult::{build_lut, MultiplierSpec, ProductLut};
use axrobust::dataio::ModelContainer;
use axrobust::nnengine::{ApproxModel, ApproxScope, Classifier, LutBank, MultAssignment, QuantizedModel};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn spec(id: &str) -> Result<MultiplierSpec, String> {
    let s: MultiplierSpec = id.parse().map_err(|e: axrobust::Error| e.to_string())?;
    if matches!(s, MultiplierSpec::FromFile { .. }) {
        return Err("LUT files cannot be read in the browser".into());
    }
    Ok(s)
}

/// Ids of the built-in multipliers, comma separated.
#[wasm_bindgen]
pub fn multiplier_ids() -> String {
    MultiplierSpec::paper_set()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Mean signed relative error over a `bins × bins` grid of operand ranges
/// covering 1..=255, row-major with `a` along rows. Cells hold NaN only if
/// empty.
#[wasm_bindgen]
pub fn lut_heatmap(id: &str, bins: u32) -> Result<Vec<f64>, String> {
    if !(1..=255).contains(&bins) {
        return Err(format!("bins must be in 1..=255, got {bins}"));
    }
    let lut = build_lut(&spec(id)?).map_err(|e| e.to_string())?;
    Ok(heatmap(&lut, bins as usize))
}

fn heatmap(lut: &ProductLut, bins: usize) -> Vec<f64> {
    let mut sum = vec![0.0; bins * bins];
    let mut count = vec![0u32; bins * bins];
    let bin = |v: usize| (v - 1) * bins / 255;
    for a in 1..=255usize {
        for b in 1..=255usize {
            let exact = (a * b) as f64;
            let rel = (lut.get(a as u8, b as u8) as f64 - exact) / exact;
            let cell = bin(a) * bins + bin(b);
            sum[cell] += rel;
            count[cell] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect()
}

#[derive(Serialize)]
struct Breakdown {
    id: String,
    label: String,
    a: u8,
    b: u8,
    exact: u32,
    approx: u32,
    abs_error: i64,
    rel_error: f64,
}

/// One product under a multiplier, as JSON.
#[wasm_bindgen]
pub fn multiply(id: &str, a: u8, b: u8) -> Result<String, String> {
    let s = spec(id)?;
    let approx = s.multiply(a, b).map_err(|e| e.to_string())?;
    let exact = a as u32 * b as u32;
    let out = Breakdown {
        id: s.to_string(),
        label: s.label(),
        a,
        b,
        exact,
        approx,
        abs_error: approx as i64 - exact as i64,
        rel_error: if exact == 0 { 0.0 } else { (approx as f64 - exact as f64) / exact as f64 },
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Verdict {
    id: String,
    label: String,
    clean: usize,
    adversarial: usize,
}

#[derive(Serialize)]
struct Exploration {
    float_clean: usize,
    float_adversarial: usize,
    distances: DistanceTriple,
    adversarial: Vec<f64>,
    multipliers: Vec<Verdict>,
}

/// A calibrated model plus one integer model per built-in multiplier.
#[wasm_bindgen]
pub struct Explorer {
    container: ModelContainer,
    targets: Vec<(MultiplierSpec, ApproxModel)>,
}

#[wasm_bindgen]
impl Explorer {
    /// Loads a calibrated model container.
    #[wasm_bindgen(constructor)]
    pub fn new(container: &[u8]) -> Result<Explorer, String> {
        let container = ModelContainer::from_bytes(container).map_err(|e| e.to_string())?;
        let qp = container.require_qparams().map_err(|e| e.to_string())?;
        let model = &container.model;
        let qmodel = Arc::new(QuantizedModel::prepare(model, qp).map_err(|e| e.to_string())?);
        let scope = ApproxScope::reference_policy(model);
        let mut bank = LutBank::new();
        let mut targets = Vec::new();
        for s in MultiplierSpec::paper_set() {
            let a = MultAssignment::uniform(model, &s, scope);
            bank.ensure_all(&a).map_err(|e| e.to_string())?;
            let luts = bank.resolve(model, &a).map_err(|e| e.to_string())?;
            targets.push((s, ApproxModel::new(qmodel.clone(), luts)));
        }
        Ok(Explorer { container, targets })
    }

    pub fn input_len(&self) -> usize {
        self.container.model.input.len()
    }

    /// Attacks `image` (pixels in [0, 1]) with the given label and returns
    /// the perturbed image, its distances and every model's prediction as JSON.
    pub fn explore(&self, image: &[f64], label: usize, method: &str, norm: &str, eps: f64, seed: u64) -> Result<String, String> {
        let method: AttackMethod = method.parse().map_err(|e: axrobust::Error| e.to_string())?;
        let norm: Norm = norm.parse().map_err(|e: axrobust::Error| e.to_string())?;
        let model = &self.container.model;
        let cfg = AttackConfig::new(method, norm, eps).with_seed(seed);
        let adv = cfg.run(model, image, label, 0).map_err(|e| e.to_string())?;
        let predict = |c: &dyn Fn(&[f64]) -> axrobust::Result<usize>, x: &[f64]| c(x).map_err(|e| e.to_string());
        let float = |x: &[f64]| model.classify(x).map(|l| l.predicted());
        let mut multipliers = Vec::new();
        for (s, t) in &self.targets {
            let run = |x: &[f64]| t.classify(x).map(|l| l.predicted());
            multipliers.push(Verdict {
                id: s.to_string(),
                label: s.label(),
                clean: predict(&run, image)?,
                adversarial: predict(&run, &adv)?,
            });
        }
        let out = Exploration {
            float_clean: predict(&float, image)?,
            float_adversarial: predict(&float, &adv)?,
            distances: distances(image, &adv).map_err(|e| e.to_string())?,
            adversarial: adv,
            multipliers,
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }
}
