//! White-box gradient attacks on the float model.

mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::axmult::MultiplierSpec;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::nnengine::{accuracy, ApproxModel, ApproxScope, Classifier, LutBank, ModelSpec, MultAssignment};
use crate::par;
use crate::quant::QuantParams;

pub use sweep::{run_sweep, EvalTiming, SweepConfig, DEFAULT_EPS_GRID, DEFAULT_SUBSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Bim,
    Pgd,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 3] = [AttackMethod::Fgsm, AttackMethod::Bim, AttackMethod::Pgd];
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Bim => "bim",
            AttackMethod::Pgd => "pgd",
        })
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "bim" => Ok(AttackMethod::Bim),
            "pgd" => Ok(AttackMethod::Pgd),
            _ => Err(Error::InvalidArgument(format!("unknown attack '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub const ALL: [Norm; 2] = [Norm::L2, Norm::Linf];

    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => l2(v),
            Norm::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Norm::L2),
            "linf" | "l_inf" | "inf" => Ok(Norm::Linf),
            _ => Err(Error::InvalidArgument(format!("unknown norm '{s}'"))),
        }
    }
}

/// One attack setting. `alpha`/`iters` are ignored by FGSM and
/// `random_start` only matters for PGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub norm: Norm,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Default step settings per method: BIM α = 0.2, PGD α = 0.01 with a
    /// random start, both 50 iterations.
    pub fn new(method: AttackMethod, norm: Norm, eps: f64) -> Self {
        let (alpha, iters, random_start) = match method {
            AttackMethod::Fgsm => (eps, 1, false),
            AttackMethod::Bim => (0.2, 50, false),
            AttackMethod::Pgd => (0.01, 50, true),
        };
        AttackConfig {
            method,
            norm,
            eps,
            alpha,
            iters,
            random_start,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if self.method != AttackMethod::Fgsm {
            if !(self.alpha > 0.0) {
                return Err(Error::InvalidArgument(format!("alpha must be > 0, got {}", self.alpha)));
            }
            if self.iters == 0 {
                return Err(Error::InvalidArgument("iters must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Runs the attack on one image. PGD draws its start from `seed ^ index`.
    pub fn run(&self, model: &ModelSpec, x: &[f64], label: usize, index: u64) -> Result<Vec<f64>> {
        self.validate()?;
        match self.method {
            AttackMethod::Fgsm => fgsm(model, x, label, self.eps, self.norm),
            AttackMethod::Bim => bim(model, x, label, self.eps, self.alpha, self.iters, self.norm),
            AttackMethod::Pgd => pgd(
                model,
                x,
                label,
                self.eps,
                self.alpha,
                self.iters,
                self.norm,
                self.random_start,
                self.seed ^ index,
            ),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Clamps `delta` into the `eps`-ball of the given norm, in place.
pub fn project_ball(delta: &mut [f64], eps: f64, norm: Norm) {
    match norm {
        Norm::Linf => delta.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
        Norm::L2 => {
            let n = l2(delta);
            if n > eps {
                let k = eps / n;
                delta.iter_mut().for_each(|d| *d *= k);
            }
        }
    }
}

/// One gradient step of size `step` from `x`: sign direction for Linf,
/// unit-L2 direction for L2. A zero L2 gradient leaves `x` unchanged.
fn ascend(x: &mut [f64], grad: &[f64], step: f64, norm: Norm) {
    match norm {
        Norm::Linf => {
            for (v, g) in x.iter_mut().zip(grad) {
                if *g != 0.0 {
                    *v += step * g.signum();
                }
            }
        }
        Norm::L2 => {
            let n = l2(grad);
            if n > 0.0 {
                for (v, g) in x.iter_mut().zip(grad) {
                    *v += step * g / n;
                }
            }
        }
    }
}

/// `x0 + project(x - x0)`, clipped to [0, 1].
fn project_onto(x: &mut [f64], x0: &[f64], eps: f64, norm: Norm) {
    let mut delta: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    project_ball(&mut delta, eps, norm);
    for ((v, o), d) in x.iter_mut().zip(x0).zip(&delta) {
        *v = clip01(o + d);
    }
}

pub fn fgsm(model: &ModelSpec, x: &[f64], label: usize, eps: f64, norm: Norm) -> Result<Vec<f64>> {
    model.check_input(x)?;
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let grad = model.input_gradient(x, label)?;
    let mut adv = x.to_vec();
    ascend(&mut adv, &grad, eps, norm);
    adv.iter_mut().for_each(|v| *v = clip01(*v));
    Ok(adv)
}

/// Iterated FGSM with step `min(alpha, eps)`, projecting after every step.
pub fn bim(
    model: &ModelSpec,
    x: &[f64],
    label: usize,
    eps: f64,
    alpha: f64,
    iters: usize,
    norm: Norm,
) -> Result<Vec<f64>> {
    model.check_input(x)?;
    iterate(model, x, x.to_vec(), label, eps, alpha, iters, norm)
}

#[allow(clippy::too_many_arguments)]
pub fn pgd(
    model: &ModelSpec,
    x: &[f64],
    label: usize,
    eps: f64,
    alpha: f64,
    iters: usize,
    norm: Norm,
    random_start: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    model.check_input(x)?;
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let mut start = x.to_vec();
    if random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = random_in_ball(&mut rng, x.len(), eps, norm);
        for ((s, o), d) in start.iter_mut().zip(x).zip(delta) {
            *s = clip01(o + d);
        }
    }
    iterate(model, x, start, label, eps, alpha, iters, norm)
}

/// Uniform sample from the `eps`-ball of dimension `n`.
fn random_in_ball(rng: &mut ChaCha8Rng, n: usize, eps: f64, norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..n).map(|_| rng.gen_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let mut dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let len = l2(&dir);
            let radius = eps * rng.gen::<f64>().powf(1.0 / n as f64);
            dir.iter_mut().for_each(|d| *d *= radius / len);
            dir
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    model: &ModelSpec,
    x0: &[f64],
    mut x: Vec<f64>,
    label: usize,
    eps: f64,
    alpha: f64,
    iters: usize,
    norm: Norm,
) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(x0.to_vec());
    }
    let step = alpha.min(eps);
    for _ in 0..iters {
        let grad = model.input_gradient(&x, label)?;
        ascend(&mut x, &grad, step, norm);
        project_onto(&mut x, x0, eps, norm);
    }
    Ok(x)
}

/// L0, L2 and L∞ distance between two images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTriple {
    /// Pixels whose values differ at all.
    pub l0: usize,
    pub l2: f64,
    pub linf: f64,
}

impl DistanceTriple {
    pub fn in_norm(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }
}

pub fn distances(x: &[f64], adv: &[f64]) -> Result<DistanceTriple> {
    if x.len() != adv.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            actual: vec![adv.len()],
        });
    }
    let diff: Vec<f64> = x.iter().zip(adv).map(|(a, b)| b - a).collect();
    Ok(DistanceTriple {
        l0: x.iter().zip(adv).filter(|(a, b)| a != b).count(),
        l2: l2(&diff),
        linf: Norm::Linf.of(&diff),
    })
}

/// Adversarial versions of the first `n` images of `data`, in order.
pub fn generate(model: &ModelSpec, data: &Dataset, n: usize, cfg: &AttackConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n = n.min(data.len());
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    par::map_indexed(n, |i| cfg.run(model, &data.image(i), data.label(i), i as u64))
        .into_iter()
        .collect()
}

/// Top-1 accuracy of `target` on prepared images against the leading labels of `data`.
pub fn accuracy_on<C: Classifier + ?Sized>(target: &C, images: &[Vec<f64>], data: &Dataset) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptySubset);
    }
    let hits = par::map_indexed(images.len(), |i| {
        target
            .classify(&images[i])
            .map(|l| (l.predicted() == data.label(i)) as usize)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / images.len() as f64)
}

/// Accuracy of the integer model under `assignment` on adversarial images
/// crafted against the float model.
pub fn robust_accuracy(
    model: &ModelSpec,
    qparams: &QuantParams,
    assignment: &MultAssignment,
    bank: &mut LutBank,
    data: &Dataset,
    attack: &AttackConfig,
    subset: usize,
) -> Result<f64> {
    let target = ApproxModel::build(model, qparams, assignment, bank)?;
    let adv = generate(model, data, subset, attack)?;
    accuracy_on(&target, &adv, data)
}

/// Clean integer-model accuracy for one multiplier on the first `subset` images.
pub fn clean_accuracy(
    model: &ModelSpec,
    qparams: &QuantParams,
    spec: &MultiplierSpec,
    scope: ApproxScope,
    bank: &mut LutBank,
    data: &Dataset,
    subset: usize,
) -> Result<f64> {
    let assignment = MultAssignment::uniform(model, spec, scope);
    let target = ApproxModel::build(model, qparams, &assignment, bank)?;
    accuracy(&target, data, subset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnengine::{Dense, Layer, Shape};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn toy() -> ModelSpec {
        let mut m = ModelSpec::new(
            "toy",
            Shape::new(1, 4, 4),
            vec![
                Layer::Flatten,
                Layer::Dense(Dense::zeros(16, 8)),
                Layer::Relu,
                Layer::Dense(Dense::zeros(8, 3)),
            ],
        )
        .unwrap();
        m.init_params(11);
        m
    }

    fn image(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..16).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn distance_examples() {
        let x = vec![0.2; 9];
        assert_eq!(distances(&x, &x).unwrap(), DistanceTriple { l0: 0, l2: 0.0, linf: 0.0 });
        let mut y = x.clone();
        y[4] = 0.7;
        let d = distances(&x, &y).unwrap();
        assert_eq!(d.l0, 1);
        assert!((d.l2 - 0.5).abs() < 1e-12 && (d.linf - 0.5).abs() < 1e-12);
        assert!(distances(&x, &y[..3]).is_err());
    }

    #[test]
    fn l2_projection_scales_to_radius() {
        let mut d = vec![0.3, -0.4];
        project_ball(&mut d, 0.25, Norm::L2);
        assert!((l2(&d) - 0.25).abs() < 1e-12);
        assert!((d[0] / d[1] + 0.75).abs() < 1e-12);
        let mut inside = vec![0.1, 0.1];
        project_ball(&mut inside, 1.0, Norm::L2);
        assert_eq!(inside, vec![0.1, 0.1]);
    }

    #[test]
    fn zero_budget_is_identity() {
        let m = toy();
        let x = image(1);
        for method in AttackMethod::ALL {
            for norm in Norm::ALL {
                let cfg = AttackConfig::new(method, norm, 0.0).with_seed(5);
                assert_eq!(cfg.run(&m, &x, 1, 0).unwrap(), x, "{method} {norm}");
            }
        }
    }

    #[test]
    fn single_bim_step_matches_fgsm() {
        let m = toy();
        let x = image(2);
        let f = fgsm(&m, &x, 0, 0.05, Norm::Linf).unwrap();
        let b = bim(&m, &x, 0, 0.05, 0.2, 1, Norm::Linf).unwrap();
        assert_eq!(f, b);
    }

    #[test]
    fn fgsm_moves_every_pixel_with_gradient() {
        let m = toy();
        let x: Vec<f64> = vec![0.5; 16];
        let adv = fgsm(&m, &x, 2, 0.1, Norm::Linf).unwrap();
        let d = distances(&x, &adv).unwrap();
        assert!(d.linf > 0.0 && d.linf <= 0.1 + 1e-6);
        let g = m.input_gradient(&x, 2).unwrap();
        for i in 0..16 {
            assert!((adv[i] - x[i]) * g[i] >= 0.0);
        }
    }

    #[test]
    fn attacks_raise_the_loss() {
        let m = toy();
        let x = image(3);
        let before = m.loss(&x, 0).unwrap();
        for method in AttackMethod::ALL {
            let adv = AttackConfig::new(method, Norm::Linf, 0.1).run(&m, &x, 0, 0).unwrap();
            assert!(m.loss(&adv, 0).unwrap() > before, "{method}");
        }
    }

    #[test]
    fn wrong_shape_and_bad_config() {
        let m = toy();
        assert!(matches!(fgsm(&m, &[0.0; 3], 0, 0.1, Norm::L2), Err(Error::ShapeMismatch { .. })));
        let mut cfg = AttackConfig::new(AttackMethod::Bim, Norm::L2, 0.1);
        cfg.iters = 0;
        assert!(cfg.validate().is_err());
        assert!(AttackConfig::new(AttackMethod::Pgd, Norm::L2, -1.0).validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in AttackMethod::ALL {
            assert_eq!(m.to_string().parse::<AttackMethod>().unwrap(), m);
        }
        for n in Norm::ALL {
            assert_eq!(n.to_string().parse::<Norm>().unwrap(), n);
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_bounded(
            d in proptest::collection::vec(-3.0f64..3.0, 1..20),
            eps in 0.0f64..2.0,
            linf in any::<bool>(),
        ) {
            let norm = if linf { Norm::Linf } else { Norm::L2 };
            let mut once = d.clone();
            project_ball(&mut once, eps, norm);
            prop_assert!(norm.of(&once) <= eps + 1e-9);
            let mut twice = once.clone();
            project_ball(&mut twice, eps, norm);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            if norm.of(&d) <= eps {
                prop_assert_eq!(once, d);
            }
        }

        #[test]
        fn budget_and_range_hold(
            seed in any::<u64>(),
            eps in 0.0f64..2.0,
            m in 0usize..3,
            linf in any::<bool>(),
            label in 0usize..3,
        ) {
            let model = toy();
            let x = image(seed);
            let norm = if linf { Norm::Linf } else { Norm::L2 };
            let mut cfg = AttackConfig::new(AttackMethod::ALL[m], norm, eps).with_seed(seed);
            cfg.iters = 5;
            let adv = cfg.run(&model, &x, label, 7).unwrap();
            prop_assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
            let d = distances(&x, &adv).unwrap();
            prop_assert!(d.in_norm(norm) <= eps + 1e-6);
            prop_assert!(d.linf <= d.l2 + 1e-15 && d.l2 <= d.linf * (16f64).sqrt() + 1e-12);
            prop_assert_eq!(d.l0 == 0, d.linf == 0.0);
            prop_assert_eq!(adv, cfg.run(&model, &x, label, 7).unwrap());
        }
    }
}
