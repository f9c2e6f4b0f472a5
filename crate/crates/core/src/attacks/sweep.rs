use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{accuracy_on, generate, AttackConfig, AttackMethod, Norm};
use crate::axmult::MultiplierSpec;
use crate::dataio::{Dataset, EvalReport, EvalRow};
use crate::error::{Error, Result};
use crate::nnengine::{ApproxModel, ApproxScope, LutBank, ModelSpec, MultAssignment, QuantizedModel};
use crate::quant::QuantParams;

pub const DEFAULT_EPS_GRID: [f64; 15] = [
    0.0, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5, 1.0, 1.5, 2.0,
];

pub const DEFAULT_SUBSET: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub multipliers: Vec<MultiplierSpec>,
    pub methods: Vec<AttackMethod>,
    pub norms: Vec<Norm>,
    pub eps_grid: Vec<f64>,
    pub subset: usize,
    pub seed: u64,
    /// `None` picks the scope from the model depth.
    pub scope: Option<ApproxScope>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            multipliers: MultiplierSpec::paper_set(),
            methods: AttackMethod::ALL.to_vec(),
            norms: Norm::ALL.to_vec(),
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            subset: DEFAULT_SUBSET,
            seed: 0,
            scope: None,
        }
    }
}

impl SweepConfig {
    pub fn row_count(&self) -> usize {
        self.multipliers.len() * self.methods.len() * self.norms.len() * self.eps_grid.len()
    }
}

/// Wall-clock cost of one report row. Adversarial generation is shared by
/// all multipliers at the same (attack, norm, eps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalTiming {
    pub generation: Duration,
    pub evaluation: Duration,
}

/// Robust accuracy for every (multiplier, attack, norm, eps) combination.
/// Rows come back ordered by multiplier (as configured), attack, norm and
/// ascending eps. `on_eval` sees each row as soon as it is measured.
pub fn run_sweep<F>(
    model: &ModelSpec,
    qparams: &QuantParams,
    data: &Dataset,
    cfg: &SweepConfig,
    bank: &mut LutBank,
    mut on_eval: F,
) -> Result<EvalReport>
where
    F: FnMut(&EvalRow, &EvalTiming),
{
    if cfg.subset == 0 || data.is_empty() {
        return Err(Error::EmptySubset);
    }
    if cfg.row_count() == 0 {
        return Err(Error::InvalidArgument("sweep has no configurations".into()));
    }
    let n = cfg.subset.min(data.len());
    let scope = cfg.scope.unwrap_or_else(|| ApproxScope::reference_policy(model));
    let qmodel = Arc::new(QuantizedModel::prepare(model, qparams)?);
    let targets = cfg
        .multipliers
        .iter()
        .map(|spec| {
            let a = MultAssignment::uniform(model, spec, scope);
            bank.ensure_all(&a)?;
            Ok(ApproxModel::new(qmodel.clone(), bank.resolve(model, &a)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let clean_images: Vec<Vec<f64>> = (0..n).map(|i| data.image(i)).collect();
    let clean = targets
        .iter()
        .map(|t| accuracy_on(t, &clean_images, data))
        .collect::<Result<Vec<_>>>()?;

    let mut eps_grid = cfg.eps_grid.clone();
    eps_grid.sort_by(f64::total_cmp);
    let mut keyed = Vec::with_capacity(cfg.row_count());
    for (ai, &method) in cfg.methods.iter().enumerate() {
        for (ni, &norm) in cfg.norms.iter().enumerate() {
            for (ei, &eps) in eps_grid.iter().enumerate() {
                let attack = AttackConfig::new(method, norm, eps).with_seed(cfg.seed);
                let t0 = Instant::now();
                let adv = generate(model, data, n, &attack)?;
                let generation = t0.elapsed();
                for (mi, target) in targets.iter().enumerate() {
                    let t1 = Instant::now();
                    let robust = accuracy_on(target, &adv, data)?;
                    let timing = EvalTiming {
                        generation,
                        evaluation: t1.elapsed(),
                    };
                    let row = EvalRow {
                        model: model.name.clone(),
                        multiplier: cfg.multipliers[mi].to_string(),
                        attack: method,
                        norm,
                        eps,
                        n_images: n,
                        clean_acc: clean[mi],
                        robust_acc: robust,
                        seed: cfg.seed,
                    };
                    on_eval(&row, &timing);
                    keyed.push(((mi, ai, ni, ei), row));
                }
            }
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    EvalReport::new(keyed.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Split;
    use crate::nnengine::{Dense, Layer, Shape};
    use crate::quant::calibrate;

    #[test]
    fn default_sweep_has_630_rows() {
        assert_eq!(SweepConfig::default().row_count(), 630);
    }

    #[test]
    fn small_sweep_is_ordered_and_deterministic() {
        let mut m = ModelSpec::new(
            "toy",
            Shape::new(1, 3, 3),
            vec![Layer::Flatten, Layer::Dense(Dense::zeros(9, 4))],
        )
        .unwrap();
        m.init_params(2);
        let pixels: Vec<u8> = (0..90u32).map(|i| (i * 37 % 256) as u8).collect();
        let labels: Vec<u8> = (0..10u8).map(|i| i % 4).collect();
        let data = Dataset::from_raw(Split::Test, Shape::new(1, 3, 3), pixels, labels).unwrap();
        let images: Vec<Vec<f64>> = (0..10).map(|i| data.image(i)).collect();
        let qp = calibrate(&m, images.iter().map(|v| v.as_slice())).unwrap();
        let cfg = SweepConfig {
            multipliers: vec![MultiplierSpec::Exact, MultiplierSpec::Drum { k: 3 }],
            eps_grid: vec![0.1, 0.0],
            subset: 8,
            seed: 4,
            ..Default::default()
        };
        let mut bank = LutBank::new();
        let mut seen = 0;
        let a = run_sweep(&m, &qp, &data, &cfg, &mut bank, |_, _| seen += 1).unwrap();
        let b = run_sweep(&m, &qp, &data, &cfg, &mut bank, |_, _| {}).unwrap();
        assert_eq!(seen, 24);
        assert_eq!(a, b);
        let rows = a.rows();
        assert_eq!(rows.len(), 24);
        assert_eq!(rows[0].multiplier, "exact");
        assert_eq!(rows[12].multiplier, "drum3");
        assert_eq!((rows[0].eps, rows[1].eps), (0.0, 0.1));
        for r in rows.iter().filter(|r| r.eps == 0.0) {
            assert_eq!(r.robust_acc, r.clean_acc);
        }
    }
}
