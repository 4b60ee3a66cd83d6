use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{fit, FitConfig, FitLog};
use super::pipeline::{calibrate_threshold, evaluate_runs, sample_all, Calibration, PickingConfig, Prepared, SetEval};
use super::synth::{synth_gather, SynthSpec};
use crate::error::Result;
use crate::gather::Gather;
use crate::pick::PickThresholds;
use crate::precondition::{FeatureKind, LmoPrior, PreconditionConfig};
use crate::rng::derive_seed;
use crate::unet::{BayesUNet, UNetConfig};

/// Ranges from which each synthetic gather's parameters are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub base: SynthSpec,
    pub v_range: (f64, f64),
    pub t0_range: (f64, f64),
    pub peak_hz_range: (f64, f64),
    /// Per-gather SNR range in dB; `None` keeps gathers clean.
    pub snr_range: Option<(f64, f64)>,
}

impl CorpusSpec {
    /// 64-trace, 256-sample gathers around 3000 m/s with 5–20 dB noise.
    pub fn desk() -> Self {
        Self {
            base: SynthSpec::desk(0),
            v_range: (2850.0, 3150.0),
            t0_range: (0.04, 0.06),
            peak_hz_range: (50.0, 70.0),
            snr_range: Some((5.0, 20.0)),
        }
    }

    /// Spec of gather `index`; depends only on `(seed, index)`.
    pub fn gather_spec(&self, seed: u64, index: usize) -> SynthSpec {
        let s = derive_seed(seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut draw = |(a, b): (f64, f64)| if a == b { a } else { rng.random_range(a..b) };
        SynthSpec {
            v_true: draw(self.v_range),
            t0_true: draw(self.t0_range),
            peak_hz: draw(self.peak_hz_range),
            snr_db: self.snr_range.map(&mut draw),
            seed: s,
            ..self.base.clone()
        }
    }

    pub fn generate(&self, seed: u64, count: usize, survey: &str) -> Result<Vec<Gather>> {
        (0..count)
            .map(|i| Ok(synth_gather(&self.gather_spec(seed, i))?.with_survey_id(survey)))
            .collect()
    }
}

/// Preconditioning matched to [`CorpusSpec::desk`]: 64-sample LMO window, all three channels.
pub fn desk_precondition() -> PreconditionConfig {
    PreconditionConfig {
        lmo: LmoPrior { v: 3000.0, t0: 0.05, window_length: 64 },
        features: vec![FeatureKind::Gather, FeatureKind::Agc, FeatureKind::Slta],
        agc_window: 30,
        slta_short: 3,
        slta_long: 5,
    }
}

/// Everything one seeded train → calibrate → test run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub unet: UNetConfig,
    pub fit: FitConfig,
    pub picking: PickingConfig,
    pub apr_min: f64,
    pub tp_grid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: BayesUNet,
    pub log: FitLog,
    pub calibration: Calibration,
    pub test: SetEval,
}

/// Trains from `seed` (initialization, shuffling and dropout masks), calibrates
/// `T_p` on `val` and evaluates `test` at the calibrated threshold.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &[Prepared],
    val: &[Prepared],
    test: &[Prepared],
    seed: u64,
) -> Result<ExperimentOutcome> {
    let mut model = BayesUNet::new(cfg.unet.clone(), derive_seed(seed, 0))?;
    let samples: Vec<_> = train.iter().map(|p| p.training_sample(cfg.unet.label_type)).collect();
    let log = fit(&mut model, &samples, val, &cfg.fit, cfg.picking.snap_radius, derive_seed(seed, 1), |_| {})?;
    let ts = cfg.picking.mc_samples;
    let val_runs = sample_all(&model, val, ts, derive_seed(seed, 2))?;
    let radius = cfg.picking.snap_radius;
    let post = cfg.picking.post_processing;
    let calibration = calibrate_threshold(&cfg.tp_grid, cfg.apr_min, |t_p| {
        let th = PickThresholds { t_p, ..cfg.picking.thresholds };
        Ok(evaluate_runs(val, &val_runs, &th, radius)?.final_report(post).total())
    })?;
    let th = PickThresholds { t_p: calibration.t_p, ..cfg.picking.thresholds };
    let test_runs = sample_all(&model, test, ts, derive_seed(seed, 3))?;
    let test = evaluate_runs(test, &test_runs, &th, radius)?;
    Ok(ExperimentOutcome { model, log, calibration, test })
}
