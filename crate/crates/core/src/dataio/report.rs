use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackMethod, Norm};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "model,multiplier,attack,norm,eps,n_images,clean_acc,robust_acc,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub multiplier: String,
    pub attack: AttackMethod,
    pub norm: Norm,
    pub eps: f64,
    pub n_images: usize,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub seed: u64,
}

/// Non-empty list of rows, unique on (model, multiplier, attack, norm, eps).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Report("report has no rows".into()));
        }
        let mut keys = HashSet::new();
        for r in &rows {
            let key = (&r.model, &r.multiplier, r.attack, r.norm, r.eps.to_bits());
            if !keys.insert(key) {
                return Err(Error::Report(format!(
                    "duplicate row {} {} {} {} eps={}",
                    r.model, r.multiplier, r.attack, r.norm, r.eps
                )));
            }
        }
        Ok(EvalReport { rows })
    }

    pub fn rows(&self) -> &[EvalRow] {
        &self.rows
    }

    /// Rows matching one (multiplier, attack, norm), in stored order.
    pub fn series(&self, multiplier: &str, attack: AttackMethod, norm: Norm) -> impl Iterator<Item = &EvalRow> {
        let multiplier = multiplier.to_string();
        self.rows
            .iter()
            .filter(move |r| r.multiplier == multiplier && r.attack == attack && r.norm == norm)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Report(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::Report(e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
            return Err(Error::Report(format!("unexpected header {header:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()
            .map_err(|e| Error::Report(e.to_string()))?;
        EvalReport::new(rows)
    }
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_csv()?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_csv(&text)
}
