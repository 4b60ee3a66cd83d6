//! The five subcommands. Each returns the files it wrote; nothing depends on wall-clock time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fbpick::eval::{
    calibrate_threshold, evaluate_runs, fit, gather_seed, robustness_sweep, sample_all, summarize, summary_csv,
    sweep_csv, Calibration, EpochLog, EvalReport, GatherEval, Prepared, SweepSettings, Tally,
};
use fbpick::gather::{
    load_gather, make_split, resolve, save_gather, Frame, Gather, Manifest, PickSeries, Regime, SurveyEntry,
    MANIFEST_FILE,
};
use fbpick::pick::{pick_report, PickThresholds};
use fbpick::precondition::FeatureKind;
use fbpick::rng::derive_seed;
use fbpick::unet::{load_model, save_model, BayesUNet};
use fbpick::FbError;
use fbpick_autograd::checkpoint::CheckpointManifest;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Seed streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const FIT_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;
const PICK_STREAM: u64 = 3;
const ROBUSTNESS_STREAM: u64 = 4;
const SPLIT_STREAM: u64 = 5;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.paths.out)?;
    Ok(&cfg.paths.out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "gather".into())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn synth(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let root = &cfg.paths.data;
    let mut manifest = Manifest::default();
    let mut written = Vec::new();
    for (k, s) in cfg.synth.surveys.iter().enumerate() {
        let dir = root.join(&s.survey_id);
        fs::create_dir_all(&dir)?;
        let gathers = cfg.synth.corpus.generate(derive_seed(cfg.seed, k as u64), s.gathers, &s.survey_id)?;
        let mut entry = SurveyEntry { survey_id: s.survey_id.clone(), gathers: Vec::new() };
        for (i, g) in gathers.iter().enumerate() {
            let rel = format!("{}/g{i:05}.fbg", s.survey_id);
            let path = resolve(root, &rel);
            save_gather(g, &path)?;
            written.push(path);
            entry.gathers.push(rel);
        }
        println!("survey {}: {} gathers of {}x{}", s.survey_id, s.gathers, cfg.synth.corpus.base.samples, cfg.synth.corpus.base.traces);
        manifest.surveys.push(entry);
    }
    let mpath = root.join(MANIFEST_FILE);
    manifest.save(&mpath)?;
    cfg.write_resolved(root)?;
    println!("wrote {} gathers and {}", written.len(), mpath.display());
    written.push(mpath);
    Ok(written)
}

fn prepare(cfg: &RunConfig, root: &Path, manifest: &Manifest, ids: &[String]) -> CliResult<Vec<Prepared>> {
    ids.iter()
        .map(|id| {
            let mut g = load_gather(&resolve(root, id)).map_err(|e| CliError::Data(format!("{id}: {e}")))?;
            if let Some(s) = manifest.survey_of(id) {
                g = g.with_survey_id(s);
            }
            Ok(Prepared::new(id.clone(), g, &cfg.precondition)?)
        })
        .collect()
}

/// Checks that the preconditioning produces what the checkpointed network consumes.
fn check_compatible(model: &BayesUNet, manifest: &CheckpointManifest, cfg: &RunConfig) -> CliResult<()> {
    let net = model.config();
    if net.in_channels != cfg.precondition.features.len() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} input channels, preconditioning yields {}",
            net.in_channels,
            cfg.precondition.features.len()
        )));
    }
    if let Some(v) = manifest.metadata["run"].get("features") {
        let trained: Vec<FeatureKind> = serde_json::from_value(v.clone())
            .map_err(|e| CliError::Data(format!("checkpoint features: {e}")))?;
        if trained != cfg.precondition.features {
            return Err(CliError::Config(format!(
                "checkpoint was trained on features {trained:?}, config asks for {:?}",
                cfg.precondition.features
            )));
        }
    }
    let step = 1usize << net.depth;
    if cfg.precondition.lmo.window_length % step != 0 {
        return Err(CliError::Config(format!(
            "window length {} is not divisible by 2^depth = {step} of the checkpoint",
            cfg.precondition.lmo.window_length
        )));
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> CliResult<(BayesUNet, CheckpointManifest)> {
    let path = cfg
        .paths
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("no checkpoint given (--checkpoint or paths.checkpoint)".into()))?;
    let (model, manifest) = load_model(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    check_compatible(&model, &manifest, cfg)?;
    Ok((model, manifest))
}

/// Picking thresholds with T_p taken from the checkpoint's calibration when enabled.
fn thresholds(cfg: &RunConfig, manifest: &CheckpointManifest) -> PickThresholds {
    let calibrated = manifest.metadata["run"]["calibrated_t_p"].as_f64();
    match calibrated {
        Some(t_p) if cfg.calibration.use_calibrated => PickThresholds { t_p, ..cfg.picking.thresholds },
        _ => cfg.picking.thresholds,
    }
}

fn train_log_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_acc,val_mae,val_apr\n");
    for e in epochs {
        let _ = writeln!(s, "{},{:.8},{},{},{}", e.epoch, e.train_loss, opt(e.val_acc), opt(e.val_mae), opt(e.val_apr));
    }
    s
}

pub fn train(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let finetuning = matches!(cfg.regime, Regime::Finetuning { .. });
    if finetuning && cfg.paths.pretrained.is_none() {
        return Err(CliError::Config("the finetuning regime needs a pretrained checkpoint (--pretrained)".into()));
    }
    let root = &cfg.paths.data;
    let manifest = Manifest::load(root).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
    let split = make_split(&manifest.survey_map(), &cfg.regime, derive_seed(cfg.seed, SPLIT_STREAM))?;
    let train = prepare(cfg, root, &manifest, &split.train)?;
    let val = prepare(cfg, root, &manifest, &split.validation)?;

    let mut model = match &cfg.paths.pretrained {
        Some(p) => {
            let (model, m) = load_model(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            check_compatible(&model, &m, cfg)?;
            model
        }
        None => BayesUNet::new(cfg.unet.clone(), derive_seed(cfg.seed, INIT_STREAM))?,
    };
    let fit_cfg = if finetuning { cfg.finetune_fit() } else { cfg.training.clone() };
    let samples: Vec<_> = train.iter().map(|p| p.training_sample(model.config().label_type)).collect();
    println!(
        "training on {} gathers, validating on {} (batch {}, lr {})",
        train.len(),
        val.len(),
        fit_cfg.batch_size,
        fit_cfg.lr
    );
    let log = fit(&mut model, &samples, &val, &fit_cfg, cfg.picking.snap_radius, derive_seed(cfg.seed, FIT_STREAM), |e| {
        println!("epoch {:>3}  loss {:.6}  val acc {}  mae {}  apr {}", e.epoch, e.train_loss, opt(e.val_acc), opt(e.val_mae), opt(e.val_apr));
    })?;

    let calibration: Option<Calibration> = if val.is_empty() {
        None
    } else {
        let runs = sample_all(&model, &val, cfg.picking.mc_samples, derive_seed(cfg.seed, CALIBRATION_STREAM))?;
        let th = cfg.picking.thresholds;
        let r = calibrate_threshold(&cfg.calibration.tp_grid, cfg.calibration.apr_min, |t_p| {
            let th = PickThresholds { t_p, ..th };
            Ok(evaluate_runs(&val, &runs, &th, cfg.picking.snap_radius)?.final_report(cfg.picking.post_processing).total())
        });
        match r {
            Ok(c) => Some(c),
            Err(e @ FbError::AprUnreachable { .. }) => {
                eprintln!("warning: {e}; picking will use the configured T_p");
                None
            }
            Err(e) => return Err(e.into()),
        }
    };

    let out = out_dir(cfg)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let extra = json!({
        "seed": cfg.seed,
        "regime": cfg.regime,
        "features": cfg.precondition.features,
        "best_epoch": log.best_epoch,
        "calibrated_t_p": calibration.as_ref().map(|c| c.t_p),
    });
    save_model(&model, &ckpt, extra)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    fs::write(&log_path, train_log_csv(&log.epochs))?;
    let split_path = out.join("split.json");
    fs::write(&split_path, serde_json::to_string_pretty(&split).expect("split serializes") + "\n")?;
    let cal_path = out.join("calibration.json");
    fs::write(&cal_path, serde_json::to_string_pretty(&calibration).expect("calibration serializes") + "\n")?;
    cfg.write_resolved(out)?;
    match &calibration {
        Some(c) => println!("kept epoch {}; calibrated T_p {:.2} (val acc {:.4}, apr {:.4})", log.best_epoch, c.t_p, c.acc, c.apr),
        None => println!("kept epoch {}; no calibration", log.best_epoch),
    }
    println!("checkpoint {}", ckpt.display());
    Ok(vec![ckpt, log_path, split_path, cal_path])
}

/// Outcome of `pick`: reports written and per-file failures.
#[derive(Debug, Default)]
pub struct PickSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

pub fn pick(cfg: &RunConfig, gathers: &[PathBuf]) -> CliResult<PickSummary> {
    if gathers.is_empty() {
        return Err(CliError::Config("no gather files given".into()));
    }
    let mut stems: Vec<String> = gathers.iter().map(|p| stem(p)).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Config(format!("two gathers share the report name {:?}", w[0])));
    }
    let (model, manifest) = load_checkpoint(cfg)?;
    let th = thresholds(cfg, &manifest);
    let out = out_dir(cfg)?;
    cfg.write_resolved(out)?;
    let root = derive_seed(cfg.seed, PICK_STREAM);
    let mut summary = PickSummary::default();
    for (i, path) in gathers.iter().enumerate() {
        let one = || -> CliResult<PathBuf> {
            let g = load_gather(path)?;
            let p = Prepared::new(stem(path), g, &cfg.precondition)?;
            let run = model.mc_sample(&p.stack, cfg.picking.mc_samples, gather_seed(root, i))?;
            let o = p.pick(&run, &th, cfg.picking.snap_radius)?;
            let target = out.join(format!("{}.picks.csv", stem(path)));
            fs::write(&target, pick_report(&o, cfg.picking.post_processing))?;
            let fin = if cfg.picking.post_processing { &o.filtered } else { &o.unfiltered };
            println!("{}: {} of {} traces picked", path.display(), fin.picked_count(), fin.len());
            Ok(target)
        };
        match one() {
            Ok(t) => summary.written.push(t),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                summary.failed.push((path.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// The `pick` column of a pick report as absolute sample indices.
pub fn read_pick_report(path: &Path) -> CliResult<PickSeries> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "pick")
        .ok_or_else(|| CliError::Data(format!("{}: no pick column", path.display())))?;
    let picks = lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<i32>().ok())
                .filter(|&v| v >= -1)
                .ok_or_else(|| CliError::Data(format!("{}: bad pick on line {}", path.display(), k + 2)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(PickSeries::new(picks, Frame::AbsoluteTime))
}

fn eval_run(dir: &Path, gathers: &[(String, Gather)]) -> CliResult<EvalReport> {
    let mut per = Vec::with_capacity(gathers.len());
    for (name, g) in gathers {
        let picks = read_pick_report(&dir.join(format!("{name}.picks.csv")))?;
        if picks.len() != g.traces() {
            return Err(CliError::Data(format!(
                "{}: {} picks for a gather of {} traces",
                dir.join(name).display(),
                picks.len(),
                g.traces()
            )));
        }
        per.push(GatherEval { gather: name.clone(), tally: Tally::of(&picks, &g.label_series())? });
    }
    Ok(EvalReport::from_gathers(per))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Per-run reports against the gathers' labels, plus mean and sample std across runs.
pub fn eval(cfg: &RunConfig, runs: &[PathBuf], gathers: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    if runs.is_empty() || gathers.is_empty() {
        return Err(CliError::Config("eval needs at least one --picks directory and one gather".into()));
    }
    let labelled = gathers
        .iter()
        .map(|p| Ok((stem(p), load_gather(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?)))
        .collect::<CliResult<Vec<_>>>()?;
    let out = out_dir(cfg)?;
    let mut written = Vec::new();
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (k, dir) in runs.iter().enumerate() {
        let report = eval_run(dir, &labelled)?;
        let t = report.total();
        println!("{}: apr {:.6}", dir.display(), t.apr());
        let (Some(mae), Some(acc), Some(acc1)) = (t.mae(), t.acc(), t.acc_within_one()) else {
            return Err(FbError::NoComparableTraces.into());
        };
        println!("{}: mae {mae:.6}  acc {acc:.6}  acc@1 {acc1:.6}", dir.display());
        let name = if runs.len() == 1 { "eval.csv".to_string() } else { format!("eval_{k}.csv") };
        let path = out.join(name);
        fs::write(&path, report.to_csv())?;
        written.push(path);
        rows.push([mae, acc, acc1, t.apr()]);
    }
    let mut s = String::from("metric,mean,std,runs\n");
    for (m, name) in ["mae", "acc", "acc_within_1", "apr"].iter().enumerate() {
        let (mean, std) = mean_std(&rows.iter().map(|r| r[m]).collect::<Vec<_>>());
        let _ = writeln!(s, "{name},{mean:.6},{std:.6},{}", rows.len());
    }
    let path = out.join("eval_summary.csv");
    fs::write(&path, s)?;
    written.push(path);
    cfg.write_resolved(out)?;
    Ok(written)
}

pub fn robustness(cfg: &RunConfig, gathers: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    if gathers.is_empty() {
        return Err(CliError::Config("no gather files given".into()));
    }
    let (model, manifest) = load_checkpoint(cfg)?;
    let th = thresholds(cfg, &manifest);
    let clean = gathers
        .iter()
        .map(|p| {
            let g = load_gather(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(Prepared::new(stem(p), g, &cfg.precondition)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let grid = if cfg.robustness.tp_grid.is_empty() { vec![th.t_p] } else { cfg.robustness.tp_grid.clone() };
    let settings = SweepSettings {
        precondition: &cfg.precondition,
        thresholds: th,
        mc_samples: cfg.picking.mc_samples,
        snap_radius: cfg.picking.snap_radius,
        snrs: &cfg.robustness.snrs,
        tp_grid: &grid,
        seed: derive_seed(cfg.seed, ROBUSTNESS_STREAM),
    };
    let rows = robustness_sweep(&model, &clean, &settings)?;
    let summary = summarize(&rows);
    let out = out_dir(cfg)?;
    let sweep_path = out.join("sweep.csv");
    fs::write(&sweep_path, sweep_csv(&rows))?;
    let sum_path = out.join("sweep_summary.csv");
    let text = summary_csv(&summary);
    fs::write(&sum_path, &text)?;
    cfg.write_resolved(out)?;
    print!("{text}");
    Ok(vec![sweep_path, sum_path])
}
