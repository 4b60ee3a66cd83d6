use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, GatherEval, Tally};
use crate::error::{invalid, FbError, Result};
use crate::gather::Gather;
use crate::pick::{pick_gather, PickOutcome, PickThresholds};
use crate::precondition::{build_stack, FeatureStack, PreconditionConfig};
use crate::rng::derive_seed;
use crate::unet::{crop_labels, mask_from_labels, BayesUNet, LabelType, McRunResult, TrainSample};

/// Inference-side settings: thresholds, Monte Carlo budget and post-processing switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PickingConfig {
    pub thresholds: PickThresholds,
    /// `T_s`.
    pub mc_samples: usize,
    pub snap_radius: usize,
    /// Apply the entropy/variance filter to the final picks.
    pub post_processing: bool,
}

impl Default for PickingConfig {
    fn default() -> Self {
        Self {
            thresholds: PickThresholds::default(),
            mc_samples: 50,
            snap_radius: 5,
            post_processing: true,
        }
    }
}

impl PickingConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.mc_samples == 0 {
            return invalid("mc_samples", "at least one Monte Carlo sample is required");
        }
        Ok(())
    }
}

/// A gather with its network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub gather: Gather,
    pub stack: FeatureStack,
}

impl Prepared {
    pub fn new(id: impl Into<String>, gather: Gather, pre: &PreconditionConfig) -> Result<Self> {
        let stack = build_stack(&gather, pre)?;
        Ok(Self { id: id.into(), gather, stack })
    }

    pub fn training_sample(&self, label_type: LabelType) -> TrainSample {
        let labels = crop_labels(&self.gather, &self.stack.crop_top, self.stack.window_length());
        TrainSample {
            input: self.stack.channels.clone(),
            target: mask_from_labels(&labels, self.stack.window_length(), label_type),
        }
    }

    pub fn pick(&self, run: &McRunResult, th: &PickThresholds, snap_radius: usize) -> Result<PickOutcome> {
        pick_gather(run, &self.gather, &self.stack.crop_top, th, snap_radius)
    }
}

/// Monte Carlo seed of the `index`-th gather of a set.
pub fn gather_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// One Monte Carlo run per gather; gather `i` uses `gather_seed(seed, i)`.
pub fn sample_all(model: &BayesUNet, set: &[Prepared], ts: usize, seed: u64) -> Result<Vec<McRunResult>> {
    set.iter()
        .enumerate()
        .map(|(i, p)| model.mc_sample(&p.stack, ts, gather_seed(seed, i)))
        .collect()
}

/// Filtered and unfiltered evaluation of cached runs at threshold `t_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEval {
    pub filtered: EvalReport,
    pub unfiltered: EvalReport,
}

impl SetEval {
    /// The report of the picks the pipeline would emit.
    pub fn final_report(&self, post_processing: bool) -> &EvalReport {
        if post_processing {
            &self.filtered
        } else {
            &self.unfiltered
        }
    }
}

pub fn evaluate_runs(set: &[Prepared], runs: &[McRunResult], th: &PickThresholds, snap_radius: usize) -> Result<SetEval> {
    if set.len() != runs.len() {
        return invalid("runs", format!("{} runs for {} gathers", runs.len(), set.len()));
    }
    let (mut f, mut u) = (Vec::new(), Vec::new());
    for (p, run) in set.iter().zip(runs) {
        let o = p.pick(run, th, snap_radius)?;
        let labels = p.gather.label_series();
        f.push(GatherEval { gather: p.id.clone(), tally: Tally::of(&o.filtered, &labels)? });
        u.push(GatherEval { gather: p.id.clone(), tally: Tally::of(&o.unfiltered, &labels)? });
    }
    Ok(SetEval { filtered: EvalReport::from_gathers(f), unfiltered: EvalReport::from_gathers(u) })
}

/// `0.05, 0.10, …, 0.95`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..20).map(|k| f64::from(k * 5) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t_p: f64,
    pub acc: f64,
    pub apr: f64,
    /// `(t_p, acc, apr)` for every grid point; `acc` is `None` without comparable traces.
    pub table: Vec<(f64, Option<f64>, f64)>,
}

/// Grid threshold of highest pooled ACC among those whose APR reaches `apr_min`;
/// ties go to the larger threshold.
pub fn calibrate_threshold(
    grid: &[f64],
    apr_min: f64,
    mut eval: impl FnMut(f64) -> Result<Tally>,
) -> Result<Calibration> {
    if grid.is_empty() {
        return invalid("threshold grid", "is empty");
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &t_p in grid {
        let tally = eval(t_p)?;
        let (acc, apr) = (tally.acc(), tally.apr());
        table.push((t_p, acc, apr));
        let Some(acc) = acc else { continue };
        if apr < apr_min {
            continue;
        }
        let better = match best {
            None => true,
            Some((bt, ba, _)) => acc > ba || (acc == ba && t_p > bt),
        };
        if better {
            best = Some((t_p, acc, apr));
        }
    }
    match best {
        Some((t_p, acc, apr)) => Ok(Calibration { t_p, acc, apr, table }),
        None => Err(FbError::AprUnreachable {
            apr_min,
            achieved: table.iter().map(|&(t, _, a)| (t, a)).collect(),
        }),
    }
}
