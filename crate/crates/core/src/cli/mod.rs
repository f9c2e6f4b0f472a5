//! Command-line front end. Every flag may also come from a TOML file given
//! with `--config`; flags on the command line take precedence.

mod commands;

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::attacks::{AttackMethod, Norm, DEFAULT_EPS_GRID, DEFAULT_SUBSET};
use crate::axmult::MultiplierSpec;
use crate::error::{Error, Result};
use crate::nnengine::{ApproxScope, Optimizer, TrainConfig};

pub use commands::execute;

#[derive(Debug, Parser)]
#[command(name = "axrobust", version, about = "Approximate-multiplier inference and robustness sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build product tables and write one LUT file per multiplier.
    GenLuts,
    /// Print error statistics of each multiplier.
    LutStats,
    /// Train LeNet-5 on MNIST and write a model container.
    Train,
    /// Add quantization scales to a trained container.
    Calibrate,
    /// Test-set accuracy per multiplier.
    EvalAccuracy,
    /// Adversarial sweep over multipliers, attacks, norms and budgets.
    EvalRobustness,
}

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with defaults for any flag below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model container path.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Directory with the four MNIST IDX files.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Comma-separated multiplier ids (exact, drum3, strim4_8, lut:<file>, ...).
    #[arg(long, global = true, value_delimiter = ',')]
    pub multipliers: Option<Vec<String>>,
    /// fgsm, bim, pgd
    #[arg(long, global = true, value_delimiter = ',')]
    pub attacks: Option<Vec<String>>,
    /// l2, linf
    #[arg(long, global = true, value_delimiter = ',')]
    pub norms: Option<Vec<String>>,
    /// Perturbation budgets, in [0,1] pixel units
    #[arg(long = "eps-grid", global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub eps_grid: Option<Vec<f64>>,
    /// Number of leading test images to evaluate.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    /// Seed for shuffling, weight init and random starts
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file, or directory for gen-luts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Layers that use the approximate multiplier: all or conv.
    #[arg(long, global = true)]
    pub scope: Option<String>,
    /// sgd or adam.
    #[arg(long, global = true)]
    pub optimizer: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Learning rate
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size", global = true)]
    pub batch_size: Option<usize>,
    /// Train on the first N training images only.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    /// Training images used to calibrate activation scales.
    #[arg(long = "calib-images", global = true)]
    pub calib_images: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    multipliers: Option<Vec<String>>,
    attacks: Option<Vec<String>>,
    norms: Option<Vec<String>>,
    eps_grid: Option<Vec<f64>>,
    subset: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    scope: Option<String>,
    optimizer: Option<String>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    limit: Option<usize>,
    calib_images: Option<usize>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub multipliers: Vec<MultiplierSpec>,
    pub attacks: Vec<AttackMethod>,
    pub norms: Vec<Norm>,
    pub eps_grid: Vec<f64>,
    /// `None` means the whole split for accuracy runs and 64 for sweeps.
    pub subset: Option<usize>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub scope: Option<ApproxScope>,
    pub train: TrainConfig,
    pub calib_images: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PathBuf::from("model.axm"),
            data: PathBuf::from("data/mnist"),
            multipliers: MultiplierSpec::paper_set(),
            attacks: AttackMethod::ALL.to_vec(),
            norms: Norm::ALL.to_vec(),
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            subset: None,
            seed: 1,
            threads: None,
            out: None,
            scope: None,
            train: TrainConfig::default(),
            calib_images: 1000,
        }
    }
}

impl RunConfig {
    pub fn sweep_subset(&self) -> usize {
        self.subset.unwrap_or(DEFAULT_SUBSET)
    }

    /// Merges command-line flags over the optional config file over defaults.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => read_config(p)?,
            None => FileConfig::default(),
        };
        let mut cfg = RunConfig::default();
        macro_rules! pick {
            ($f:ident) => {
                flags.$f.clone().or(file.$f.clone())
            };
        }
        if let Some(v) = pick!(model) {
            cfg.model = v;
        }
        if let Some(v) = pick!(data) {
            cfg.data = v;
        }
        if let Some(v) = pick!(multipliers) {
            cfg.multipliers = parse_list(&v)?;
        }
        if let Some(v) = pick!(attacks) {
            cfg.attacks = parse_list(&v)?;
        }
        if let Some(v) = pick!(norms) {
            cfg.norms = parse_list(&v)?;
        }
        if let Some(v) = pick!(eps_grid) {
            if let Some(bad) = v.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
                return Err(Error::Config(format!("eps {bad} is not a finite non-negative number")));
            }
            cfg.eps_grid = v;
        }
        cfg.subset = pick!(subset);
        if cfg.subset == Some(0) {
            return Err(Error::Config("subset must be positive".into()));
        }
        if let Some(v) = pick!(seed) {
            cfg.seed = v;
        }
        cfg.threads = pick!(threads);
        cfg.out = pick!(out);
        cfg.scope = pick!(scope).map(|s| s.parse()).transpose()?;
        cfg.train.seed = cfg.seed;
        if let Some(v) = pick!(optimizer) {
            cfg.train.optimizer = match v.to_ascii_lowercase().as_str() {
                "sgd" => Optimizer::Sgd,
                "adam" => Optimizer::Adam,
                other => return Err(Error::Config(format!("unknown optimizer '{other}'"))),
            };
        }
        if let Some(v) = pick!(epochs) {
            cfg.train.epochs = v;
        }
        if let Some(v) = pick!(lr) {
            cfg.train.lr = v;
        }
        if let Some(v) = pick!(batch_size) {
            cfg.train.batch_size = v;
        }
        cfg.train.limit = pick!(limit);
        if let Some(v) = pick!(calib_images) {
            cfg.calib_images = v;
        }
        if cfg.multipliers.is_empty() || cfg.attacks.is_empty() || cfg.norms.is_empty() || cfg.eps_grid.is_empty() {
            return Err(Error::Config("multiplier, attack, norm and eps lists must be non-empty".into()));
        }
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.trim().parse()).collect()
}

/// Parses `args`, runs the subcommand and writes human-readable output to `out`.
pub fn run<I, S>(args: I, out: &mut (dyn std::io::Write + Send)) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(out, "{e}").map_err(|e| Error::io("<stdout>", e));
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let cfg = RunConfig::resolve(&cli.flags)?;
    execute(cli.command, &cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> Flags {
        let mut v = vec!["axrobust", "lut-stats"];
        v.extend_from_slice(args);
        Cli::try_parse_from(v).unwrap().flags
    }

    #[test]
    fn defaults_cover_the_full_experiment() {
        let c = RunConfig::resolve(&flags(&[])).unwrap();
        assert_eq!(c.multipliers.len(), 7);
        assert_eq!(c.attacks.len() * c.norms.len() * c.eps_grid.len(), 90);
        assert_eq!(c.sweep_subset(), 64);
    }

    #[test]
    fn lists_and_numbers_parse() {
        let c = RunConfig::resolve(&flags(&[
            "--multipliers",
            "exact,DR4,strim4_8",
            "--attacks",
            "pgd",
            "--norms",
            "linf,l2",
            "--eps-grid",
            "0,0.25",
            "--subset",
            "10",
        ]))
        .unwrap();
        assert_eq!(c.multipliers[1], MultiplierSpec::Drum { k: 4 });
        assert_eq!(c.multipliers[2], MultiplierSpec::ScaleTrim { t: 4, c: 8 });
        assert_eq!(c.attacks, vec![AttackMethod::Pgd]);
        assert_eq!(c.norms, vec![Norm::Linf, Norm::L2]);
        assert_eq!(c.eps_grid, vec![0.0, 0.25]);
        assert_eq!(c.subset, Some(10));
        assert!(RunConfig::resolve(&flags(&["--attacks", "cw"])).is_err());
        assert!(RunConfig::resolve(&flags(&["--eps-grid", "-1"])).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 5\nsubset = 32\nnorms = [\"linf\"]\n").unwrap();
        let ps = p.to_str().unwrap();
        let c = RunConfig::resolve(&flags(&["--config", ps, "--seed", "9"])).unwrap();
        assert_eq!((c.seed, c.subset, c.norms.clone()), (9, Some(32), vec![Norm::Linf]));

        std::fs::write(&p, "sead = 5\n").unwrap();
        assert!(matches!(RunConfig::resolve(&flags(&["--config", ps])), Err(Error::Config(_))));
    }
}
