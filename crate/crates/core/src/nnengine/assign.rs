use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::ModelSpec;
use crate::axmult::{build_lut, MultiplierSpec, ProductLut};
use crate::error::{Error, Result};

/// Which multiplying layers receive the approximate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxScope {
    /// Conv and Dense layers.
    AllLayers,
    /// Conv layers only; Dense layers stay exact.
    ConvOnly,
}

impl ApproxScope {
    /// Shallow networks (≤ 2 conv layers, e.g. LeNet-5) are approximated
    /// everywhere; deeper ones only in their convolutions.
    pub fn reference_policy(model: &ModelSpec) -> Self {
        if model.conv_count() <= 2 {
            ApproxScope::AllLayers
        } else {
            ApproxScope::ConvOnly
        }
    }
}

impl fmt::Display for ApproxScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApproxScope::AllLayers => "all",
            ApproxScope::ConvOnly => "conv",
        })
    }
}

impl FromStr for ApproxScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ApproxScope::AllLayers),
            "conv" => Ok(ApproxScope::ConvOnly),
            other => Err(Error::InvalidArgument(format!("unknown scope '{other}'"))),
        }
    }
}

/// Multiplier used by each Conv/Dense layer, keyed by layer index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultAssignment {
    per_layer: BTreeMap<usize, MultiplierSpec>,
}

impl MultAssignment {
    /// Same multiplier in every layer covered by `scope`, exact elsewhere.
    pub fn uniform(model: &ModelSpec, spec: &MultiplierSpec, scope: ApproxScope) -> Self {
        let per_layer = model
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_multiplying())
            .map(|(i, l)| {
                let covered = scope == ApproxScope::AllLayers || l.is_conv();
                let s = if covered { spec.clone() } else { MultiplierSpec::Exact };
                (i, s)
            })
            .collect();
        MultAssignment { per_layer }
    }

    pub fn exact(model: &ModelSpec) -> Self {
        Self::uniform(model, &MultiplierSpec::Exact, ApproxScope::AllLayers)
    }

    /// Explicit per-layer map; must cover exactly the multiplying layers.
    pub fn from_map(model: &ModelSpec, per_layer: BTreeMap<usize, MultiplierSpec>) -> Result<Self> {
        for (i, layer) in model.layers.iter().enumerate() {
            if layer.is_multiplying() != per_layer.contains_key(&i) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} ({:?}) {} a multiplier assignment",
                    layer.kind(),
                    if layer.is_multiplying() { "needs" } else { "cannot take" }
                )));
            }
        }
        for spec in per_layer.values() {
            spec.validate()?;
        }
        Ok(MultAssignment { per_layer })
    }

    pub fn get(&self, layer: usize) -> Option<&MultiplierSpec> {
        self.per_layer.get(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &MultiplierSpec)> {
        self.per_layer.iter().map(|(&i, s)| (i, s))
    }

    pub fn specs(&self) -> impl Iterator<Item = &MultiplierSpec> {
        self.per_layer.values()
    }
}

/// Per-layer LUT handles ready for the integer forward pass.
pub type ResolvedLuts = Vec<Option<Arc<ProductLut>>>;

/// Built product tables, shared between assignments.
#[derive(Debug, Default, Clone)]
pub struct LutBank {
    luts: HashMap<MultiplierSpec, Arc<ProductLut>>,
}

impl LutBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: MultiplierSpec, lut: ProductLut) {
        self.luts.insert(spec, Arc::new(lut));
    }

    /// Builds (or loads) the table for `spec` unless already present.
    pub fn ensure(&mut self, spec: &MultiplierSpec) -> Result<Arc<ProductLut>> {
        if let Some(lut) = self.luts.get(spec) {
            return Ok(lut.clone());
        }
        let lut = Arc::new(build_lut(spec)?);
        self.luts.insert(spec.clone(), lut.clone());
        Ok(lut)
    }

    pub fn ensure_all(&mut self, assignment: &MultAssignment) -> Result<()> {
        for spec in assignment.specs() {
            self.ensure(spec)?;
        }
        Ok(())
    }

    pub fn get(&self, spec: &MultiplierSpec) -> Option<Arc<ProductLut>> {
        self.luts.get(spec).cloned()
    }

    pub fn resolve(&self, model: &ModelSpec, assignment: &MultAssignment) -> Result<ResolvedLuts> {
        (0..model.layers.len())
            .map(|i| match assignment.get(i) {
                Some(spec) => self
                    .get(spec)
                    .map(Some)
                    .ok_or_else(|| Error::MissingLut(spec.to_string())),
                None => Ok(None),
            })
            .collect()
    }
}
