//! From Monte Carlo segmentation maps to filtered, snapped picks.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gather::{Frame, Gather, PickSeries, Polarity, NO_PICK};
use crate::unet::McRunResult;

/// Traces whose sampled picks are rejected more often than this fraction are invalid.
pub const MAX_REJECTED_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PickThresholds {
    /// Mean-map picking threshold.
    pub t_p: f64,
    /// Largest accepted pick entropy (bits).
    pub t_e: f64,
    /// Largest accepted pick variance (squared samples).
    pub t_v: f64,
}

impl Default for PickThresholds {
    fn default() -> Self {
        Self { t_p: 0.5, t_e: 0.2, t_v: 0.2 }
    }
}

impl PickThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_p) {
            return invalid("thresholds.t_p", format!("{} outside [0, 1]", self.t_p));
        }
        if !(self.t_e.is_finite() && self.t_v.is_finite()) {
            return invalid("thresholds", "t_e and t_v must be finite");
        }
        Ok(())
    }
}

/// Per-trace spread of the Monte Carlo picks.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyVectors {
    pub variance: Vec<f64>,
    pub entropy: Vec<f64>,
    pub valid: Vec<bool>,
    /// Fraction of samples that rejected the trace.
    pub rejected_fraction: Vec<f64>,
}

pub fn mean_map(run: &McRunResult) -> Result<Array2<f64>> {
    let Some(first) = run.maps.first() else {
        return invalid("run", "no segmentation maps");
    };
    let mut acc = Array2::<f64>::zeros(first.dim());
    for m in &run.maps {
        if m.dim() != first.dim() {
            return invalid("run", "segmentation maps differ in shape");
        }
        acc.zip_mut_with(m, |a, &v| *a += f64::from(v));
    }
    let k = run.maps.len() as f64;
    Ok(acc.mapv(|v| v / k))
}

/// Row of each column's maximum if it exceeds `t_p`, else [`NO_PICK`]. Ties go to the smallest row.
pub fn pick_from_map<A: Copy + Into<f64>>(s: ArrayView2<A>, t_p: f64) -> PickSeries {
    let picks = s
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = (NO_PICK, f64::NEG_INFINITY);
            for (i, &v) in col.iter().enumerate() {
                let v: f64 = v.into();
                if v > best.1 {
                    best = (i as i32, v);
                }
            }
            if best.1 > t_p {
                best.0
            } else {
                NO_PICK
            }
        })
        .collect();
    PickSeries::new(picks, Frame::CroppedWindow)
}

pub fn per_sample_picks(run: &McRunResult, t_p: f64) -> Vec<PickSeries> {
    run.maps.iter().map(|m| pick_from_map(m.view(), t_p)).collect()
}

/// Variance `E[t²] − E[t]²` and entropy in bits of the non-rejected sampled
/// picks of every trace.
pub fn uncertainty_vectors(samples: &[PickSeries]) -> Result<UncertaintyVectors> {
    let Some(first) = samples.first() else {
        return invalid("samples", "no sampled pick series");
    };
    let n = first.len();
    if samples.iter().any(|s| s.len() != n) {
        return invalid("samples", "pick series differ in length");
    }
    let ts = samples.len() as f64;
    let mut u = UncertaintyVectors {
        variance: vec![0.0; n],
        entropy: vec![0.0; n],
        valid: vec![false; n],
        rejected_fraction: vec![0.0; n],
    };
    let mut counts: HashMap<i32, usize> = HashMap::new();
    for j in 0..n {
        counts.clear();
        let (mut m, mut s1, mut s2) = (0usize, 0.0f64, 0.0f64);
        for s in samples {
            let t = s.picks[j];
            if t >= 0 {
                m += 1;
                s1 += f64::from(t);
                s2 += f64::from(t) * f64::from(t);
                *counts.entry(t).or_default() += 1;
            }
        }
        let rejected = (samples.len() - m) as f64 / ts;
        u.rejected_fraction[j] = rejected;
        if m == 0 {
            continue;
        }
        let mf = m as f64;
        let mean = s1 / mf;
        u.variance[j] = (s2 / mf - mean * mean).max(0.0);
        let mut h = 0.0;
        for &c in counts.values() {
            let q = c as f64 / mf;
            h -= q * q.log2();
        }
        u.entropy[j] = h.max(0.0);
        u.valid[j] = rejected <= MAX_REJECTED_FRACTION;
    }
    Ok(u)
}

/// Keeps pick `j` only if it is valid and both entropy and variance are below their thresholds.
pub fn filter_picks(initial: &PickSeries, u: &UncertaintyVectors, th: &PickThresholds) -> Result<PickSeries> {
    let n = initial.len();
    if u.variance.len() != n || u.entropy.len() != n || u.valid.len() != n {
        return invalid("uncertainty", format!("vectors do not match {n} traces"));
    }
    let picks = initial
        .picks
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if u.valid[j] && u.entropy[j] < th.t_e && u.variance[j] < th.t_v {
                p
            } else {
                NO_PICK
            }
        })
        .collect();
    Ok(PickSeries::new(picks, initial.frame))
}

/// Converts window picks to absolute samples and moves each to the strongest
/// extremum of the source polarity (largest peak or deepest trough) within
/// `±radius`. Equal extrema resolve to the one closest to the pick, then the
/// earlier one. Absolute-frame input is taken as is.
pub fn snap_to_extremum(
    picks: &PickSeries,
    g: &Gather,
    crop_top: &[usize],
    polarity: Polarity,
    radius: usize,
) -> Result<PickSeries> {
    let n = g.traces();
    if picks.len() != n || (picks.frame == Frame::CroppedWindow && crop_top.len() != n) {
        return invalid("picks", format!("series does not match {n} traces"));
    }
    let t = g.samples() as i64;
    let amps = g.amplitudes();
    let sign = match polarity {
        Polarity::Peak => 1.0f32,
        Polarity::Trough => -1.0,
    };
    let mut out = Vec::with_capacity(n);
    for (j, &p) in picks.picks.iter().enumerate() {
        if p < 0 {
            out.push(NO_PICK);
            continue;
        }
        let abs = match picks.frame {
            Frame::CroppedWindow => crop_top[j] as i64 + i64::from(p),
            Frame::AbsoluteTime => i64::from(p),
        };
        if abs >= t {
            return invalid("picks", format!("trace {j}: sample {abs} beyond {t} samples"));
        }
        let lo = (abs - radius as i64).max(0);
        let hi = (abs + radius as i64).min(t - 1);
        let mut best = abs;
        for i in lo..=hi {
            let (vi, vb) = (sign * amps[[i as usize, j]], sign * amps[[best as usize, j]]);
            if vi > vb || (vi == vb && (i - abs).abs() < (best - abs).abs()) {
                best = i;
            }
        }
        out.push(best as i32);
    }
    Ok(PickSeries::new(out, Frame::AbsoluteTime))
}

/// Every intermediate of picking one gather.
#[derive(Debug, Clone, PartialEq)]
pub struct PickOutcome {
    /// Mean-map maximum per trace.
    pub confidence: Vec<f64>,
    /// Thresholded mean-map picks, window frame.
    pub initial: PickSeries,
    pub uncertainty: UncertaintyVectors,
    /// Snapped initial picks, absolute frame.
    pub unfiltered: PickSeries,
    /// Snapped picks that survive the uncertainty filter, absolute frame.
    pub filtered: PickSeries,
}

/// Mean-map pick, uncertainty filter and polarity snap for one Monte Carlo run.
pub fn pick_gather(
    run: &McRunResult,
    g: &Gather,
    crop_top: &[usize],
    th: &PickThresholds,
    snap_radius: usize,
) -> Result<PickOutcome> {
    let mean = mean_map(run)?;
    let confidence = mean
        .columns()
        .into_iter()
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let initial = pick_from_map(mean.view(), th.t_p);
    let uncertainty = uncertainty_vectors(&per_sample_picks(run, th.t_p))?;
    let unfiltered = snap_to_extremum(&initial, g, crop_top, g.polarity(), snap_radius)?;
    let kept = filter_picks(&initial, &uncertainty, th)?;
    let filtered = snap_to_extremum(&kept, g, crop_top, g.polarity(), snap_radius)?;
    Ok(PickOutcome { confidence, initial, uncertainty, unfiltered, filtered })
}

/// CSV report: `trace,pick,confidence,variance,entropy,filtered`, where `pick` is the
/// final absolute pick (−1 when absent) and `filtered` is 1 for traces the
/// uncertainty filter removed. Without post-processing `pick` is the unfiltered pick.
pub fn pick_report(o: &PickOutcome, post_processing: bool) -> String {
    let mut s = String::from("trace,pick,confidence,variance,entropy,filtered\n");
    let fin = if post_processing { &o.filtered } else { &o.unfiltered };
    for j in 0..o.filtered.len() {
        let removed = o.initial.picks[j] >= 0 && o.filtered.picks[j] < 0;
        let _ = writeln!(
            s,
            "{j},{},{:.6},{:.6},{:.6},{}",
            fin.picks[j],
            o.confidence[j],
            o.uncertainty.variance[j],
            o.uncertainty.entropy[j],
            u8::from(removed)
        );
    }
    s
}
