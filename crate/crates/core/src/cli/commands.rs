use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use super::{Command, RunConfig};
use crate::attacks::{run_sweep, SweepConfig};
use crate::axmult::{build_lut, lut_error_stats, save_lut, MultErrorStats};
use crate::dataio::{load_mnist_dir, load_model, save_model, write_report, Dataset, ModelContainer, Split, TrainMeta};
use crate::error::{Error, Result};
use crate::nnengine::{accuracy, train_with, ApproxModel, ApproxScope, LutBank, ModelSpec, MultAssignment, TrainEvent};
use crate::quant::calibrate;

/// Runs one subcommand inside a pool capped at `cfg.threads`.
pub fn execute(command: Command, cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cfg.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| dispatch(command, cfg, out));
    }
    dispatch(command, cfg, out)
}

fn dispatch(command: Command, cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    match command {
        Command::GenLuts => gen_luts(cfg, out),
        Command::LutStats => lut_stats(cfg, out),
        Command::Train => train(cfg, out),
        Command::Calibrate => calibrate_cmd(cfg, out),
        Command::EvalAccuracy => eval_accuracy(cfg, out),
        Command::EvalRobustness => eval_robustness(cfg, out),
    }
}

fn w(out: &mut (dyn Write + Send), line: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => { w($out, format_args!($($t)*)) };
}

fn stats_header(out: &mut (dyn Write + Send)) -> Result<()> {
    say!(out, "{:<10} {:<12} {:>10} {:>12} {:>8} {:>7}", "label", "id", "mred", "mean_signed", "max_abs", "pairs")
}

fn stats_line(out: &mut (dyn Write + Send), label: &str, id: &str, s: &MultErrorStats) -> Result<()> {
    say!(
        out,
        "{:<10} {:<12} {:>10.6} {:>12.6} {:>8} {:>7}",
        label,
        id,
        s.mred,
        s.mean_signed_rel_error,
        s.max_abs_error,
        s.nonzero_pair_count
    )
}

fn gen_luts(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("luts"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    stats_header(out)?;
    for spec in &cfg.multipliers {
        let lut = build_lut(spec)?;
        let path = dir.join(format!("{}.axlut", spec.file_stem()));
        save_lut(&lut, &path)?;
        stats_line(out, &spec.label(), &spec.to_string(), &lut_error_stats(&lut))?;
    }
    say!(out, "wrote {} LUT files to {}", cfg.multipliers.len(), dir.display())
}

#[derive(Serialize)]
struct StatsRecord {
    id: String,
    label: String,
    stats: MultErrorStats,
}

fn lut_stats(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    stats_header(out)?;
    let mut records = Vec::new();
    for spec in &cfg.multipliers {
        let stats = lut_error_stats(&build_lut(spec)?);
        stats_line(out, &spec.label(), &spec.to_string(), &stats)?;
        records.push(StatsRecord {
            id: spec.to_string(),
            label: spec.label(),
            stats,
        });
    }
    if let Some(path) = &cfg.out {
        let json = serde_json::to_string_pretty(&records).map_err(|e| Error::Report(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    load_mnist_dir(&cfg.data, split)
}

fn train(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let train_set = load_split(cfg, Split::Train)?;
    let test_set = load_split(cfg, Split::Test)?;
    let mut model = ModelSpec::lenet5();
    model.init_params(cfg.seed);
    let t0 = Instant::now();
    let mut log_err = Ok(());
    train_with(&mut model, &train_set, &cfg.train, |_, ev| {
        if let TrainEvent::Epoch { epoch, mean_loss } = ev {
            let r = say!(out, "epoch {epoch}: mean loss {mean_loss:.5} ({:.1}s)", t0.elapsed().as_secs_f64());
            if log_err.is_ok() {
                log_err = r;
            }
        }
    })?;
    log_err?;
    let acc = accuracy(&model, &test_set, test_set.len())?;
    let container = ModelContainer::new(
        model,
        TrainMeta {
            seed: cfg.seed,
            epochs: cfg.train.epochs,
            final_accuracy: Some(acc),
        },
    );
    let path = cfg.out.clone().unwrap_or_else(|| cfg.model.clone());
    let bytes = container.to_bytes();
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    say!(out, "test accuracy {:.2}%", acc * 100.0)?;
    say!(out, "wrote {} (crc32 {:08x})", path.display(), crc32fast::hash(&bytes))
}

fn calibrate_cmd(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut container = load_model(&cfg.model)?;
    let train_set = load_split(cfg, Split::Train)?;
    let n = cfg.calib_images.min(train_set.len());
    let images: Vec<Vec<f64>> = (0..n).map(|i| train_set.image(i)).collect();
    let qp = calibrate(&container.model, images.iter().map(|v| v.as_slice()))?;
    say!(out, "input scale {:.6}, calibrated on {n} images", qp.input_scale)?;
    container.qparams = Some(qp);
    let path = cfg.out.clone().unwrap_or_else(|| cfg.model.clone());
    save_model(&container, &path)?;
    say!(out, "wrote {}", path.display())
}

fn scope_for(cfg: &RunConfig, model: &ModelSpec) -> ApproxScope {
    cfg.scope.unwrap_or_else(|| ApproxScope::reference_policy(model))
}

fn eval_accuracy(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let container = load_model(&cfg.model)?;
    let qp = container.require_qparams()?;
    let test_set = load_split(cfg, Split::Test)?;
    let n = cfg.subset.unwrap_or(test_set.len()).min(test_set.len());
    let model = &container.model;
    let scope = scope_for(cfg, model);
    let mut bank = LutBank::new();
    let float = accuracy(model, &test_set, n)?;
    say!(out, "float accuracy {:.2}% on {n} images, scope {scope}", float * 100.0)?;
    say!(out, "{:<10} {:<12} {:>9} {:>8} {:>8}", "label", "id", "accuracy", "delta", "secs")?;
    let mut csv = String::from("model,multiplier,n_images,accuracy\n");
    let mut exact = None;
    for spec in &cfg.multipliers {
        let t0 = Instant::now();
        let target = ApproxModel::build(model, qp, &MultAssignment::uniform(model, spec, scope), &mut bank)?;
        let acc = accuracy(&target, &test_set, n)?;
        if spec.is_exact() {
            exact = Some(acc);
        }
        let delta = exact.map(|e| format!("{:+.2}", (acc - e) * 100.0)).unwrap_or_default();
        say!(
            out,
            "{:<10} {:<12} {:>8.2}% {:>8} {:>8.2}",
            spec.label(),
            spec.to_string(),
            acc * 100.0,
            delta,
            t0.elapsed().as_secs_f64()
        )?;
        csv.push_str(&format!("{},{},{n},{acc}\n", model.name, spec));
    }
    if let Some(path) = &cfg.out {
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn eval_robustness(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let container = load_model(&cfg.model)?;
    let qp = container.require_qparams()?;
    let test_set = load_split(cfg, Split::Test)?;
    let sweep = SweepConfig {
        multipliers: cfg.multipliers.clone(),
        methods: cfg.attacks.clone(),
        norms: cfg.norms.clone(),
        eps_grid: cfg.eps_grid.clone(),
        subset: cfg.sweep_subset(),
        seed: cfg.seed,
        scope: cfg.scope,
    };
    say!(out, "{} evaluations on {} images", sweep.row_count(), sweep.subset)?;
    let t0 = Instant::now();
    let mut bank = LutBank::new();
    let mut log_err = Ok(());
    let report = run_sweep(&container.model, qp, &test_set, &sweep, &mut bank, |row, timing| {
        let r = say!(
            out,
            "{} {} {} eps={} robust={:.4} clean={:.4} gen={:.3}s eval={:.3}s",
            row.multiplier,
            row.attack,
            row.norm,
            row.eps,
            row.robust_acc,
            row.clean_acc,
            timing.generation.as_secs_f64(),
            timing.evaluation.as_secs_f64()
        );
        if log_err.is_ok() {
            log_err = r;
        }
    })?;
    log_err?;
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("robustness.csv"));
    write_report(&report, &path)?;
    let total = t0.elapsed().as_secs_f64();
    say!(
        out,
        "wrote {} rows to {} in {total:.1}s ({:.3} s/eval)",
        report.rows().len(),
        path.display(),
        total / report.rows().len() as f64
    )
}
