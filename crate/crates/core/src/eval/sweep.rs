use serde::{Deserialize, Serialize};

use super::metrics::Tally;
use super::pipeline::{gather_seed, Prepared};
use super::synth::inject_noise;
use crate::error::Result;
use crate::pick::PickThresholds;
use crate::precondition::PreconditionConfig;
use crate::rng::derive_seed;
use crate::unet::BayesUNet;

/// The ten noise levels of the robustness protocol, in dB.
pub const DEFAULT_SNRS: [f64; 10] = [5.0, 2.0, 1.0, -1.0, -3.0, -5.0, -7.0, -8.0, -9.0, -10.0];

/// One `(gather, snr, T_p)` cell; `snr_db = None` is the clean baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gather: String,
    pub snr_db: Option<f64>,
    pub t_p: f64,
    pub filtered: Tally,
    pub unfiltered: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub snr_db: Option<f64>,
    pub t_p: f64,
    pub filtered: Tally,
    pub unfiltered: Tally,
}

#[derive(Debug, Clone)]
pub struct SweepSettings<'a> {
    pub precondition: &'a PreconditionConfig,
    pub thresholds: PickThresholds,
    pub mc_samples: usize,
    pub snap_radius: usize,
    pub snrs: &'a [f64],
    pub tp_grid: &'a [f64],
    pub seed: u64,
}

/// Evaluates the clean set and a noisy copy per SNR level over the threshold
/// grid. Gather `i` at level `l` gets noise seed `derive_seed(seed, l)` → `i`
/// and the same Monte Carlo seed at every level.
pub fn robustness_sweep(model: &BayesUNet, clean: &[Prepared], s: &SweepSettings) -> Result<Vec<SweepRow>> {
    let levels: Vec<Option<f64>> = std::iter::once(None).chain(s.snrs.iter().copied().map(Some)).collect();
    let mut rows = Vec::with_capacity(levels.len() * clean.len() * s.tp_grid.len());
    for (l, level) in levels.iter().enumerate() {
        let noise_root = derive_seed(s.seed, l as u64);
        for (i, p) in clean.iter().enumerate() {
            let noisy = match level {
                None => p.clone(),
                Some(snr) => {
                    let g = inject_noise(&p.gather, *snr, derive_seed(noise_root, i as u64))?;
                    Prepared::new(p.id.clone(), g, s.precondition)?
                }
            };
            let run = model.mc_sample(&noisy.stack, s.mc_samples, gather_seed(s.seed, i))?;
            let labels = noisy.gather.label_series();
            for &t_p in s.tp_grid {
                let th = PickThresholds { t_p, ..s.thresholds };
                let o = noisy.pick(&run, &th, s.snap_radius)?;
                rows.push(SweepRow {
                    gather: p.id.clone(),
                    snr_db: *level,
                    t_p,
                    filtered: Tally::of(&o.filtered, &labels)?,
                    unfiltered: Tally::of(&o.unfiltered, &labels)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Pools rows per `(snr, T_p)`, keeping first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|s| s.snr_db == r.snr_db && s.t_p == r.t_p) {
            Some(s) => {
                s.filtered.add(&r.filtered);
                s.unfiltered.add(&r.unfiltered);
            }
            None => out.push(SweepSummary {
                snr_db: r.snr_db,
                t_p: r.t_p,
                filtered: r.filtered,
                unfiltered: r.unfiltered,
            }),
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn snr_label(s: Option<f64>) -> String {
    s.map(|x| x.to_string()).unwrap_or_else(|| "clean".into())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("gather,snr_db,t_p,acc,acc_within_1,mae,apr,acc_unfiltered,mae_unfiltered,apr_unfiltered\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.2},{},{},{},{:.6},{},{},{:.6}\n",
            r.gather,
            snr_label(r.snr_db),
            r.t_p,
            opt(r.filtered.acc()),
            opt(r.filtered.acc_within_one()),
            opt(r.filtered.mae()),
            r.filtered.apr(),
            opt(r.unfiltered.acc()),
            opt(r.unfiltered.mae()),
            r.unfiltered.apr(),
        ));
    }
    s
}

pub fn summary_csv(rows: &[SweepSummary]) -> String {
    let mut s = String::from("snr_db,t_p,acc,acc_within_1,mae,apr,acc_unfiltered,mae_unfiltered,apr_unfiltered\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.2},{},{},{},{:.6},{},{},{:.6}\n",
            snr_label(r.snr_db),
            r.t_p,
            opt(r.filtered.acc()),
            opt(r.filtered.acc_within_one()),
            opt(r.filtered.mae()),
            r.filtered.apr(),
            opt(r.unfiltered.acc()),
            opt(r.unfiltered.mae()),
            r.unfiltered.apr(),
        ));
    }
    s
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}
