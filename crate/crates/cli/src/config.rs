//! Run configuration: one JSON document per run, layered over a preset.

use std::fs;
use std::path::{Path, PathBuf};

use fbpick::eval::{default_threshold_grid, desk_precondition, CorpusSpec, FitConfig, PickingConfig, DEFAULT_SNRS};
use fbpick::gather::Regime;
use fbpick::precondition::{LmoPrior, PreconditionConfig};
use fbpick::unet::UNetConfig;
use fbpick_autograd::OptimizerKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size network and 128-sample windows.
    Paper,
    /// Depth-3, base-8 network on 64×64 windows; trains in seconds per epoch on one core.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory holding `manifest.json`.
    pub data: PathBuf,
    /// Output directory of the command.
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySize {
    pub survey_id: String,
    pub gathers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub corpus: CorpusSpec,
    pub surveys: Vec<SurveySize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub apr_min: f64,
    pub tp_grid: Vec<f64>,
    /// Pick with the T_p calibrated at training time when the checkpoint has one.
    pub use_calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub snrs: Vec<f64>,
    /// Empty means the picking T_p only.
    pub tp_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub regime: Regime,
    pub precondition: PreconditionConfig,
    pub unet: UNetConfig,
    pub training: FitConfig,
    pub finetune: FinetuneConfig,
    pub picking: PickingConfig,
    pub calibration: CalibrationConfig,
    pub robustness: RobustnessConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = preset == Preset::Desk;
        let corpus = CorpusSpec::desk();
        let precondition = if desk {
            desk_precondition()
        } else {
            PreconditionConfig {
                lmo: LmoPrior { window_length: 128, ..desk_precondition().lmo },
                ..desk_precondition()
            }
        };
        Self {
            preset,
            seed: 0,
            paths: Paths {
                data: "data".into(),
                out: "out".into(),
                checkpoint: None,
                pretrained: None,
            },
            synth: SynthConfig {
                corpus,
                surveys: vec![SurveySize { survey_id: "synth-a".into(), gathers: if desk { 300 } else { 100 } }],
            },
            regime: Regime::SingleSurvey { survey: "synth-a".into() },
            precondition,
            unet: if desk { UNetConfig::desk() } else { UNetConfig::paper() },
            training: FitConfig {
                max_epochs: if desk { 25 } else { 100 },
                patience: Some(if desk { 5 } else { 10 }),
                batch_size: 32,
                lr: 1e-2,
                optimizer: OptimizerKind::adam(),
            },
            finetune: FinetuneConfig { batch_size: 4, lr: 1e-4 },
            picking: PickingConfig::default(),
            calibration: CalibrationConfig {
                apr_min: 0.7,
                tp_grid: default_threshold_grid(),
                use_calibrated: true,
            },
            robustness: RobustnessConfig { snrs: DEFAULT_SNRS.to_vec(), tp_grid: Vec::new() },
        }
    }

    /// Preset defaults, then the config file, then `key.path=value` overrides.
    /// The preset comes from `preset_flag`, else the file's `preset` key, else paper.
    pub fn resolve(file: Option<&Path>, preset_flag: Option<Preset>, overrides: &[String]) -> CliResult<Self> {
        let user = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        if !user.is_object() {
            return Err(CliError::Config("config document must be a JSON object".into()));
        }
        let preset = match preset_flag {
            Some(p) => p,
            None => match user.get("preset") {
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
                None => Preset::Paper,
            },
        };
        let mut merged = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        merge(&mut merged, user);
        merged["preset"] = serde_json::to_value(preset).expect("preset serializes");
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.precondition.validate()?;
        self.unet.validate()?;
        self.picking.validate()?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.unet.in_channels != self.precondition.features.len() {
            return bad(format!(
                "unet.in_channels is {} but precondition.features has {} channels",
                self.unet.in_channels,
                self.precondition.features.len()
            ));
        }
        let step = 1usize << self.unet.depth;
        if self.precondition.lmo.window_length % step != 0 {
            return bad(format!(
                "precondition.lmo.window_length {} must be divisible by 2^depth = {step}",
                self.precondition.lmo.window_length
            ));
        }
        for (name, f) in [("training", &self.training), ("finetune", &self.finetune_fit())] {
            if f.batch_size == 0 || f.max_epochs == 0 {
                return bad(format!("{name}: batch_size and max_epochs must be at least 1"));
            }
            if !(f.lr.is_finite() && f.lr > 0.0) {
                return bad(format!("{name}: lr must be positive, got {}", f.lr));
            }
        }
        if !(0.0..=1.0).contains(&self.calibration.apr_min) {
            return bad(format!("calibration.apr_min must lie in [0, 1], got {}", self.calibration.apr_min));
        }
        if self.calibration.tp_grid.is_empty() {
            return bad("calibration.tp_grid is empty".into());
        }
        let grids = self.calibration.tp_grid.iter().chain(&self.robustness.tp_grid);
        if let Some(t) = grids.into_iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("threshold {t} outside [0, 1]"));
        }
        if let Some(s) = self.robustness.snrs.iter().find(|s| !s.is_finite()) {
            return bad(format!("robustness.snrs: {s} is not finite"));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.synth.surveys {
            if s.survey_id.is_empty() || s.survey_id.contains(['/', '\\']) || s.survey_id.starts_with('.') {
                return bad(format!("synth.surveys: {:?} is not a usable directory name", s.survey_id));
            }
            if !ids.insert(&s.survey_id) {
                return bad(format!("synth.surveys: {:?} listed twice", s.survey_id));
            }
            if s.gathers == 0 {
                return bad(format!("synth.surveys: {:?} needs at least one gather", s.survey_id));
            }
        }
        Ok(())
    }

    /// Training settings for the finetuning regime: training schedule with the finetune batch and rate.
    pub fn finetune_fit(&self) -> FitConfig {
        FitConfig { batch_size: self.finetune.batch_size, lr: self.finetune.lr, ..self.training.clone() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Copies the resolved config into an output directory.
    pub fn write_resolved(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_json())?;
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is parsed as JSON and falls back to a plain string.
fn apply_override(doc: &mut Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key.path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(CliError::Config(format!("override {spec:?} has an empty key")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {spec:?}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let c = RunConfig::preset(Preset::Paper);
        assert_eq!((c.training.batch_size, c.training.lr), (32, 1e-2));
        assert_eq!(c.training.optimizer, OptimizerKind::adam());
        assert_eq!(c.unet.dropout_rate, 0.3);
        assert_eq!(c.precondition.lmo.window_length, 128);
        assert_eq!(c.synth.corpus.base.traces, 64);
        assert_eq!((c.finetune.batch_size, c.finetune.lr), (4, 1e-4));
        assert_eq!(c.picking.mc_samples, 50);
        assert_eq!(c.robustness.snrs, DEFAULT_SNRS.to_vec());
        c.validate().unwrap();
        RunConfig::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn layering_and_overrides() {
        let mut doc = serde_json::to_value(RunConfig::preset(Preset::Desk)).unwrap();
        merge(&mut doc, serde_json::json!({"seed": 4, "training": {"max_epochs": 2}}));
        apply_override(&mut doc, "picking.thresholds.t_p=0.6").unwrap();
        apply_override(&mut doc, "paths.out=run dir").unwrap();
        let c: RunConfig = serde_json::from_value(doc.clone()).unwrap();
        assert_eq!((c.seed, c.training.max_epochs, c.training.batch_size), (4, 2, 32));
        assert_eq!(c.picking.thresholds.t_p, 0.6);
        assert_eq!(c.paths.out, PathBuf::from("run dir"));
        apply_override(&mut doc, "training.momentum=0.9").unwrap();
        assert!(serde_json::from_value::<RunConfig>(doc).is_err());
        assert!(apply_override(&mut Value::Null, "x").is_err());
    }
}
